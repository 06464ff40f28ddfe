import { ApiClient, ApiError } from './api.js';
import { renderAgreementDashboard } from './dashboard.js';
import { OfflineQueue } from './queue.js';
import {
  Selection,
  canSubmit,
  emptySelection,
  fromAnswers,
  missingQuestions,
  toPayload,
  toggleOption,
} from './state.js';
import { renderGuidelines, renderTask } from './taskview.js';
import type { SchemaDocument, TaskResponse } from './types.js';

interface HistoryEntry {
  task: TaskResponse;
  answers: Record<string, string[]>;
}

const client = new ApiClient('');
const queue = new OfflineQueue(window.localStorage);

let schema: SchemaDocument;
let annotator = '';
let round = 1;
let task: TaskResponse;
let selection: Selection;
let history: HistoryEntry[] = [];
let revisiting = false;

function $(selector: string): HTMLElement {
  const element = document.querySelector(selector);
  if (!element) throw new Error(`missing element ${selector}`);
  return element as HTMLElement;
}

function setStatus(text: string, kind: 'info' | 'error' = 'info'): void {
  const status = $('#status');
  status.textContent = text;
  status.className = kind;
}

function redraw(): void {
  $('#task').innerHTML = renderTask(task, schema, selection);
  const submit = $('#submit') as HTMLButtonElement;
  submit.disabled = task.finished === true || !canSubmit(schema, selection);
  const missing = missingQuestions(schema, selection);
  submit.title = missing.length ? `still unanswered: ${missing.join(', ')}` : 'submit (Enter)';
  ($('#previous') as HTMLButtonElement).disabled = history.length === 0;
}

async function loadNext(): Promise<void> {
  task = await client.nextTask(annotator, round);
  selection = emptySelection(schema);
  revisiting = false;
  redraw();
}

async function submitCurrent(): Promise<void> {
  if (task.finished || !canSubmit(schema, selection)) return;
  const payload = toPayload(annotator, task.entity_id!, round, selection);
  try {
    const outcome = await queue.submitOrQueue(client, payload);
    if (outcome.queued) {
      setStatus('offline: submission queued locally, will replay', 'error');
    } else {
      setStatus(`saved ${task.entity_id}`);
    }
  } catch (error) {
    if (error instanceof ApiError) {
      setStatus(`rejected: ${error.message}`, 'error');
      return; // validation problem stays on screen for fixing
    }
    throw error;
  }
  history.push({ task, answers: payload.answers });
  await loadNext();
}

function revisitPrevious(): void {
  const prior = history.pop();
  if (!prior) return;
  task = prior.task;
  selection = fromAnswers(schema, prior.answers);
  revisiting = true;
  redraw();
  setStatus(`revisiting ${task.entity_id}; submitting replaces the earlier record`);
}

async function showDashboard(): Promise<void> {
  const report = await client.agreement(round);
  $('#dashboard').innerHTML = renderAgreementDashboard(report);
}

function wireEvents(): void {
  $('#task').addEventListener('change', (event) => {
    const input = event.target as HTMLInputElement;
    if (input.dataset.question && input.dataset.option) {
      selection = toggleOption(schema, selection, input.dataset.question, input.dataset.option);
      redraw();
    }
  });
  ($('#submit') as HTMLButtonElement).addEventListener('click', () => void submitCurrent());
  ($('#previous') as HTMLButtonElement).addEventListener('click', () => revisitPrevious());
  ($('#refresh-dashboard') as HTMLButtonElement).addEventListener(
    'click',
    () => void showDashboard(),
  );
  document.addEventListener('keydown', (event) => {
    if (event.target instanceof HTMLInputElement && event.target.type === 'text') return;
    if (event.key === 'Enter') {
      event.preventDefault();
      void submitCurrent();
    } else if (event.key === 'p') {
      revisitPrevious();
    } else if (/^[1-9]$/.test(event.key)) {
      const panel = document.querySelector<HTMLElement>(
        `.question-panel[data-index="${event.key}"] input`,
      );
      panel?.focus();
    }
  });
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  annotator = params.get('annotator') ?? window.prompt('Annotator name?') ?? '';
  round = Number(params.get('round') ?? '1');
  if (!annotator) {
    setStatus('annotator name required (use ?annotator=...)', 'error');
    return;
  }
  $('#who').textContent = `${annotator} · round ${round}`;
  schema = await client.getSchema();
  $('#guidelines').innerHTML = renderGuidelines(schema);
  const replayed = await queue.flush(client);
  if (replayed > 0) setStatus(`replayed ${replayed} queued submission(s)`);
  wireEvents();
  await loadNext();
  void showDashboard();
}

boot().catch((error) => setStatus(String(error), 'error'));
