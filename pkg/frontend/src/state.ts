import type { AnnotationPayload, SchemaDocument, SchemaQuestion } from './types.js';

/** Per-question option selections for the entity currently on screen. */
export type Selection = Record<string, Set<string>>;

export function emptySelection(schema: SchemaDocument): Selection {
  const selection: Selection = {};
  for (const question of schema.questions) selection[question.id] = new Set();
  return selection;
}

function dataErrorName(question: SchemaQuestion): string | undefined {
  return question.options.find((o) => o.sentinel === 'data_error')?.name;
}

/**
 * Toggle one option. Rules, mirroring the server's validation:
 * - "Data error" is exclusive within its question; selecting it clears the
 *   rest, and it is auto-selected on every other question (each of those can
 *   then be overridden by simply picking another option there).
 * - Selecting any other option drops a previously selected "Data error".
 * - Single-select questions replace instead of accumulate.
 */
export function toggleOption(
  schema: SchemaDocument,
  selection: Selection,
  questionId: string,
  option: string,
): Selection {
  const question = schema.questions.find((q) => q.id === questionId);
  if (!question) return selection;
  const next: Selection = {};
  for (const [qid, labels] of Object.entries(selection)) next[qid] = new Set(labels);
  const current = next[questionId];
  const dataError = dataErrorName(question);

  if (current.has(option)) {
    current.delete(option);
    return next;
  }
  if (option === dataError) {
    // Extraction artifact: mark every question, overridably.
    for (const other of schema.questions) {
      const sentinel = dataErrorName(other);
      if (sentinel) next[other.id] = new Set([sentinel]);
    }
    return next;
  }
  if (question.multi_select === false) current.clear();
  if (dataError) current.delete(dataError);
  current.add(option);
  return next;
}

/** Submission is blocked until every question has at least one selection. */
export function canSubmit(schema: SchemaDocument, selection: Selection): boolean {
  return schema.questions.every((q) => (selection[q.id]?.size ?? 0) > 0);
}

export function missingQuestions(schema: SchemaDocument, selection: Selection): string[] {
  return schema.questions.filter((q) => (selection[q.id]?.size ?? 0) === 0).map((q) => q.id);
}

export function toPayload(
  annotator: string,
  entityId: string,
  round: number,
  selection: Selection,
  timestamp?: string,
): AnnotationPayload {
  const answers: Record<string, string[]> = {};
  for (const [qid, labels] of Object.entries(selection)) {
    answers[qid] = [...labels].sort();
  }
  const payload: AnnotationPayload = { annotator, entity_id: entityId, round, answers };
  if (timestamp) payload.timestamp = timestamp;
  return payload;
}

export function fromAnswers(schema: SchemaDocument, answers: Record<string, string[]>): Selection {
  const selection = emptySelection(schema);
  for (const [qid, labels] of Object.entries(answers)) {
    if (qid in selection) selection[qid] = new Set(labels);
  }
  return selection;
}
