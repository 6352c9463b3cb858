import type { Health, Transcript, TurnResponse } from './types.js';

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function readError(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    if (body && typeof body.error === 'string') return body.error;
  } catch {
    // fall through to the status line
  }
  return `request failed with status ${resp.status}`;
}

export class ChatApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async postMessage(sessionId: string | null, text: string): Promise<TurnResponse> {
    const payload: Record<string, unknown> = { text, include_distribution: true };
    if (sessionId) payload.session_id = sessionId;
    const resp = await this.fetchFn(`${this.baseUrl}/v1/message`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    });
    if (!resp.ok) throw new ApiError(resp.status, await readError(resp));
    return (await resp.json()) as TurnResponse;
  }

  async getSession(sessionId: string): Promise<Transcript> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/v1/session/${encodeURIComponent(sessionId)}`,
    );
    if (!resp.ok) throw new ApiError(resp.status, await readError(resp));
    return (await resp.json()) as Transcript;
  }

  async health(): Promise<Health> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/health`);
    if (!resp.ok) throw new ApiError(resp.status, await readError(resp));
    return (await resp.json()) as Health;
  }
}
