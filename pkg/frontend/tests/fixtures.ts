import type { RleRow, SessionPayload, SessionState } from '../src/types';

/** An 8x8 map split into a left region (0) and a right region (1). */
export function splitLabels(): RleRow[] {
  const rows: RleRow[] = [];
  for (let r = 0; r < 8; r++) {
    rows.push([
      [0, 4],
      [1, 4],
    ]);
  }
  return rows;
}

export function makeState(overrides: Partial<SessionState> = {}): SessionState {
  const zeros = new Uint8Array(64);
  return {
    iteration: 0,
    generation: 0,
    feedback_count: 0,
    grid: { height: 8, width: 8 },
    predicted_total: 5.0,
    gt_total: 2.0,
    labels_rle: splitLabels(),
    regions: [
      { id: 0, sum: 3.0, area: 32, kind: 'foreground', dots: [[1, 1]] },
      { id: 1, sum: 2.0, area: 32, kind: 'background', dots: [] },
    ],
    ranges: [
      { index: 0, label: '0', lower: null, upper: 0 },
      { index: 1, label: '0–1', lower: 0, upper: 1 },
      { index: 2, label: '1–2', lower: 1, upper: 2 },
      { index: 3, label: '2–3', lower: 2, upper: 3 },
      { index: 4, label: '3–4', lower: 3, upper: 4 },
      { index: 5, label: '>4', lower: 4, upper: null },
    ],
    density_b64: btoa(String.fromCharCode(...zeros)),
    density_max: 0,
    history: [5.0],
    ...overrides,
  };
}

export function makePayload(
  sessionId = 'abc123',
  overrides: Partial<SessionState> = {},
): SessionPayload {
  return { session_id: sessionId, state: makeState(overrides) };
}
