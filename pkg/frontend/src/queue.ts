import type { AnnotationPayload } from './types.js';
import type { ApiClient } from './api.js';
import { ApiError } from './api.js';

interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

/**
 * Offline submission queue. Failed POSTs (network down) are parked in
 * storage and replayed in order; server-side rejections (4xx) are surfaced,
 * not retried, since resubmitting an invalid record can never succeed.
 */
export class OfflineQueue {
  constructor(
    private readonly storage: StorageLike,
    private readonly key: string = 'entilabel-pending',
  ) {}

  pending(): AnnotationPayload[] {
    const raw = this.storage.getItem(this.key);
    if (!raw) return [];
    try {
      return JSON.parse(raw) as AnnotationPayload[];
    } catch {
      return [];
    }
  }

  private write(items: AnnotationPayload[]): void {
    this.storage.setItem(this.key, JSON.stringify(items));
  }

  enqueue(payload: AnnotationPayload): void {
    this.write([...this.pending(), payload]);
  }

  /** Try to submit; network failure queues the record and reports ok=false. */
  async submitOrQueue(
    client: ApiClient,
    payload: AnnotationPayload,
  ): Promise<{ ok: boolean; queued: boolean }> {
    try {
      await client.submitAnnotation(payload);
      return { ok: true, queued: false };
    } catch (error) {
      if (error instanceof ApiError) throw error;
      this.enqueue(payload);
      return { ok: false, queued: true };
    }
  }

  /** Replay queued records in order; stops at the first network failure. */
  async flush(client: ApiClient): Promise<number> {
    const items = this.pending();
    let sent = 0;
    while (sent < items.length) {
      try {
        await client.submitAnnotation(items[sent]);
        sent += 1;
      } catch (error) {
        if (error instanceof ApiError) {
          // Invalid while offline (e.g. round closed meanwhile): drop it.
          items.splice(sent, 1);
          this.write(items);
          continue;
        }
        break;
      }
    }
    this.write(items.slice(sent));
    return sent;
  }
}
