import { decodeLabels } from './rle';
import type { SessionState } from './types';

/**
 * Client-side view of one session: the decoded label map, the current
 * selection, and the iteration history.  The selected region is always tied
 * to the segmentation generation it came from.
 */
export class ViewState {
  sessionId: string;
  state: SessionState;
  labels: Int32Array;
  selectedRegion: number | null = null;
  selectionGeneration = -1;

  constructor(sessionId: string, state: SessionState) {
    this.sessionId = sessionId;
    this.state = state;
    this.labels = decodeLabels(state.labels_rle, state.grid.width);
  }

  /** Replace the state after a feedback round trip; selection is cleared. */
  apply(state: SessionState): void {
    this.state = state;
    this.labels = decodeLabels(state.labels_rle, state.grid.width);
    this.selectedRegion = null;
    this.selectionGeneration = -1;
  }

  /** Map a canvas pixel to a region id (every pixel carries a label). */
  clickToRegion(canvasX: number, canvasY: number, canvasW: number, canvasH: number): number {
    const { width, height } = this.state.grid;
    const gx = Math.min(width - 1, Math.max(0, Math.floor((canvasX / canvasW) * width)));
    const gy = Math.min(height - 1, Math.max(0, Math.floor((canvasY / canvasH) * height)));
    return this.labels[gy * width + gx];
  }

  selectRegion(regionId: number): void {
    this.selectedRegion = regionId;
    this.selectionGeneration = this.state.generation;
  }

  get canSubmit(): boolean {
    return (
      this.selectedRegion !== null && this.selectionGeneration === this.state.generation
    );
  }

  get selectedInfo() {
    if (this.selectedRegion === null) return null;
    return this.state.regions.find((r) => r.id === this.selectedRegion) ?? null;
  }
}
