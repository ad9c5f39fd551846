import type { ApiErrorBody, SessionPayload } from './types';

export class StaleRegionError extends Error {}

async function parseResponse(resp: Response): Promise<SessionPayload> {
  if (resp.ok) {
    return (await resp.json()) as SessionPayload;
  }
  let message = `${resp.status}`;
  let code = 'error';
  try {
    const body = (await resp.json()) as ApiErrorBody;
    message = body.error.message;
    code = body.error.code;
  } catch {
    /* non-JSON error body */
  }
  if (code === 'stale_region') {
    throw new StaleRegionError(message);
  }
  throw new Error(message);
}

export interface SceneSpec {
  height: number;
  width: number;
  sigma: number;
  dots: Array<[number, number]>;
}

export interface CreateOptions {
  scene: SceneSpec;
  miscal?: Record<string, unknown>;
  seed?: number;
  blind?: boolean;
}

export interface Api {
  createSession(options: CreateOptions): Promise<SessionPayload>;
  getState(sessionId: string): Promise<SessionPayload>;
  submitFeedback(
    sessionId: string,
    regionId: number,
    rangeIndex: number,
    generation: number,
  ): Promise<SessionPayload>;
}

export class SessionApi implements Api {
  constructor(private baseUrl = '') {}

  async createSession(options: CreateOptions): Promise<SessionPayload> {
    const resp = await fetch(`${this.baseUrl}/sessions`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(options),
    });
    return parseResponse(resp);
  }

  async getState(sessionId: string): Promise<SessionPayload> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}`);
    return parseResponse(resp);
  }

  async submitFeedback(
    sessionId: string,
    regionId: number,
    rangeIndex: number,
    generation: number,
  ): Promise<SessionPayload> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/feedback`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({
        region_id: regionId,
        range_index: rangeIndex,
        generation,
      }),
    });
    return parseResponse(resp);
  }
}
