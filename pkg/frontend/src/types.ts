/** Wire types for the annotation server's JSON API. */

export interface SchemaOption {
  name: string;
  description?: string;
  sentinel?: 'none' | 'not_definable' | 'data_error';
}

export interface SchemaQuestion {
  id: string;
  title: string;
  multi_select?: boolean;
  options: SchemaOption[];
}

export interface SchemaDocument {
  version?: string;
  questions: SchemaQuestion[];
  coarse_merges?: { question: string; members: string[]; merged_name: string }[];
}

export interface TaskResponse {
  entity_id?: string;
  surface?: string;
  kind?: string;
  hierarchy?: string | null;
  round: number;
  position?: number;
  done: number;
  total: number;
  closed?: boolean;
  finished?: boolean;
}

export interface AnnotationPayload {
  annotator: string;
  entity_id: string;
  round: number;
  answers: Record<string, string[]>;
  timestamp?: string;
}

export interface KappaPair {
  a: string;
  b: string;
  n: number;
  per_question: Record<string, number | null>;
  average: number | null;
}

export interface LooRow {
  annotator: string;
  per_question: Record<string, number>;
  pooled: number;
  average: number;
}

export interface AgreementReport {
  n_entities: number;
  annotators?: string[];
  pairwise_kappa: KappaPair[];
  mean_kappa_per_question?: Record<string, number | null>;
  mean_kappa?: number | null;
  alpha_per_question?: Record<string, number | null>;
  annotator_loo_f1: LooRow[];
  mean_loo_f1?: number | null;
  insufficient?: boolean;
}

export interface ProgressReport {
  total_entities: number;
  rounds: {
    round: number;
    total: number;
    closed: boolean;
    annotated_entities: number;
    by_annotator: Record<string, number>;
  }[];
}
