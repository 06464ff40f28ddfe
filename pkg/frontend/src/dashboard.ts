import type { AgreementReport } from './types.js';

/** Escape text nodes; every cell value is server-provided. */
export function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function fmt(value: number | null | undefined): string {
  return value === null || value === undefined ? '–' : value.toFixed(3);
}

export function questionIds(report: AgreementReport): string[] {
  const first = report.pairwise_kappa[0];
  if (first) return Object.keys(first.per_question).sort();
  if (report.mean_kappa_per_question) return Object.keys(report.mean_kappa_per_question).sort();
  return [];
}

/**
 * Pairwise kappa matrix plus per-annotator leave-one-out F1, rendered from
 * the server report verbatim. The dashboard never computes a metric itself;
 * it only formats what /api/agreement returned.
 */
export function renderAgreementDashboard(report: AgreementReport): string {
  if (report.insufficient || report.pairwise_kappa.length === 0) {
    return '<p class="empty-state">Not enough annotations yet: agreement needs at least two annotators with shared entities.</p>';
  }
  const qids = questionIds(report);
  const head =
    '<tr><th>Annotator pair</th>' +
    qids.map((q) => `<th>${esc(q)}</th>`).join('') +
    '<th>Average</th></tr>';
  const pairRows = report.pairwise_kappa
    .map(
      (pair) =>
        `<tr><td>${esc(pair.a)} vs ${esc(pair.b)}</td>` +
        qids.map((q) => `<td>${fmt(pair.per_question[q])}</td>`).join('') +
        `<td>${fmt(pair.average)}</td></tr>`,
    )
    .join('');
  const meanRow = report.mean_kappa_per_question
    ? `<tr class="mean-row"><td>Mean</td>` +
      qids.map((q) => `<td>${fmt(report.mean_kappa_per_question?.[q])}</td>`).join('') +
      `<td>${fmt(report.mean_kappa)}</td></tr>`
    : '';
  const alphaRow = report.alpha_per_question
    ? `<tr class="alpha-row"><td>Krippendorff alpha</td>` +
      qids.map((q) => `<td>${fmt(report.alpha_per_question?.[q])}</td>`).join('') +
      '<td></td></tr>'
    : '';
  const kappaTable = `<h3>Pairwise Cohen's Kappa (n=${report.n_entities})</h3>
<table class="kappa-table">${head}${pairRows}${meanRow}${alphaRow}</table>`;

  if (report.annotator_loo_f1.length === 0) {
    return kappaTable + '<p class="empty-state">Leave-one-out F1 needs more annotators.</p>';
  }
  const looHead =
    '<tr><th>Annotator</th>' +
    qids.map((q) => `<th>${esc(q)}</th>`).join('') +
    '<th>Average</th><th>Pooled</th></tr>';
  const looRows = report.annotator_loo_f1
    .map(
      (row) =>
        `<tr><td>${esc(row.annotator)}</td>` +
        qids.map((q) => `<td>${fmt(row.per_question[q])}</td>`).join('') +
        `<td>${fmt(row.average)}</td><td>${fmt(row.pooled)}</td></tr>`,
    )
    .join('');
  const looTable = `<h3>F1 vs leave-one-out majority</h3>
<table class="loo-table">${looHead}${looRows}</table>`;
  return kappaTable + looTable;
}
