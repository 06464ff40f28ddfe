import type { SchemaDocument, TaskResponse } from './types.js';
import type { Selection } from './state.js';
import { esc } from './dashboard.js';

/** One entity card plus all four question panels, all visible at once. */
export function renderTask(
  task: TaskResponse,
  schema: SchemaDocument,
  selection: Selection,
): string {
  if (task.finished) {
    return `<div class="finished">Round ${task.round} complete: ${task.done}/${task.total} entities annotated.</div>`;
  }
  const hierarchy = task.hierarchy ? esc(task.hierarchy) : 'UNK';
  const header = `
<div class="entity-card">
  <div class="entity-surface">&quot;${esc(task.surface ?? '')}&quot;</div>
  <div class="entity-meta">
    <span class="kind kind-${esc(task.kind ?? '')}">${esc(task.kind ?? '')}</span>
    <span class="hierarchy">Hierarchy: &quot;${hierarchy}&quot;</span>
  </div>
  <div class="round-progress">Round ${task.round}: entity ${task.position} of ${task.total} (${task.done} done)</div>
</div>`;
  const panels = schema.questions
    .map((question, index) => {
      const selected = selection[question.id] ?? new Set<string>();
      const options = question.options
        .map(
          (option) => `
    <label class="option${selected.has(option.name) ? ' selected' : ''}">
      <input type="checkbox" data-question="${esc(question.id)}"
             data-option="${esc(option.name)}"
             ${selected.has(option.name) ? 'checked' : ''}>
      <span class="option-name">${esc(option.name)}</span>
      <span class="option-desc">${esc(option.description ?? '')}</span>
    </label>`,
        )
        .join('');
      return `
<fieldset class="question-panel" data-question="${esc(question.id)}" data-index="${index + 1}">
  <legend>${esc(question.id)} – ${esc(question.title)} <kbd>${index + 1}</kbd></legend>
  ${options}
</fieldset>`;
    })
    .join('');
  return header + `<form class="question-form">${panels}</form>`;
}

export function renderGuidelines(schema: SchemaDocument): string {
  const merges = (schema.coarse_merges ?? [])
    .map(
      (m) =>
        `<li>${esc(m.question)}: ${m.members.map(esc).join(' / ')} → ${esc(m.merged_name)}</li>`,
    )
    .join('');
  return `
<h3>Guidelines</h3>
<ul>
  <li>Prefer accuracy over coverage: choose <b>Not definable</b> instead of guessing.</li>
  <li>If the name is not actually an organization or hobby, choose <b>Data error</b>; it is applied to every question (you can still override per question).</li>
  <li>Every question needs at least one selection before submitting.</li>
  <li>Keyboard: <kbd>1</kbd>–<kbd>4</kbd> focus a question, type to filter its options, <kbd>Enter</kbd> submits, <kbd>p</kbd> revisits the previous entity.</li>
</ul>
<h3>Coarse merges (analysis-time)</h3>
<ul>${merges}</ul>`;
}
