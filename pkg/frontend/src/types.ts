/** Wire types for the counting session service. */

export type RleRow = Array<[number, number]>;

export interface RegionInfo {
  id: number;
  sum: number;
  area: number;
  kind: 'foreground' | 'background';
  dots: Array<[number, number]>;
}

export interface RangeInfo {
  index: number;
  label: string;
  lower: number | null;
  upper: number | null;
}

export interface SessionState {
  iteration: number;
  generation: number;
  feedback_count: number;
  grid: { height: number; width: number };
  predicted_total: number;
  gt_total?: number;
  labels_rle: RleRow[];
  regions: RegionInfo[];
  ranges: RangeInfo[];
  density_b64: string;
  density_max: number;
  history: number[];
}

export interface SessionPayload {
  session_id: string;
  state: SessionState;
  timings?: {
    segment_ms: number;
    adapt_ms: number;
    payload_ms: number;
    total_ms: number;
  };
  loss_trajectory?: number[];
}

export interface ApiErrorBody {
  error: { code: string; message: string };
}
