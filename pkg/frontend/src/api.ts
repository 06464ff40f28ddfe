import type {
  AgreementReport,
  AnnotationPayload,
  ProgressReport,
  SchemaDocument,
  TaskResponse,
} from './types.js';

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

type FetchLike = typeof fetch;

/** Thin typed client over the annotation server; every number shown in the
 * UI comes from these responses, never from client-side computation. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      const message =
        typeof body === 'object' && body !== null && 'error' in body
          ? String((body as { error: unknown }).error)
          : `HTTP ${response.status}`;
      throw new ApiError(response.status, message);
    }
    return body as T;
  }

  getSchema(): Promise<SchemaDocument> {
    return this.request<SchemaDocument>('/api/schema');
  }

  nextTask(annotator: string, round: number): Promise<TaskResponse> {
    const query = new URLSearchParams({ annotator, round: String(round) });
    return this.request<TaskResponse>(`/api/tasks/next?${query}`);
  }

  submitAnnotation(payload: AnnotationPayload): Promise<{ id: string }> {
    return this.request<{ id: string }>('/api/annotations', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    });
  }

  agreement(round?: number): Promise<AgreementReport> {
    const query = round === undefined ? '' : `?round=${round}`;
    return this.request<AgreementReport>(`/api/agreement${query}`);
  }

  progress(): Promise<ProgressReport> {
    return this.request<ProgressReport>('/api/progress');
  }

  consensus(entityId: string, threshold = 2): Promise<Record<string, unknown>> {
    return this.request(`/api/consensus/${encodeURIComponent(entityId)}?threshold=${threshold}`);
  }
}
