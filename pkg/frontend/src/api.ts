/** Typed client for the polishing service. The UI never computes model
 * math itself; every probability and simile comes from these calls. */

export interface GapProbability {
  index: number;
  probability: number;
}

export interface LocateResponse {
  positions: GapProbability[];
}

export interface Candidate {
  simile: string;
  log_prob: number;
}

export interface GenerateResponse {
  candidates: Candidate[];
}

export interface PolishResponse {
  position: number;
  simile: string;
  polished_text: string;
  candidates: Candidate[];
}

export class ApiError extends Error {
  constructor(readonly code: string, message: string, readonly status: number) {
    super(message);
    this.name = 'ApiError';
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async locate(text: string): Promise<LocateResponse> {
    return this.post<LocateResponse>('/api/locate', { text });
  }

  async generate(text: string, position: number, beamSize: number): Promise<GenerateResponse> {
    return this.post<GenerateResponse>('/api/generate', {
      text,
      position,
      beam_size: beamSize,
    });
  }

  async health(): Promise<{ status: string; checkpoint_id: string }> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/health`);
    return (await resp.json()) as { status: string; checkpoint_id: string };
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    const payload = (await resp.json()) as T & {
      error?: { code: string; message?: string };
    };
    if (!resp.ok) {
      const code = payload.error?.code ?? 'unknown';
      const message = payload.error?.message ?? `request failed with ${resp.status}`;
      throw new ApiError(code, message, resp.status);
    }
    return payload;
  }
}
