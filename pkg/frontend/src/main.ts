import { SessionApi, StaleRegionError } from './api';
import type { Api } from './api';
import { renderOverlay } from './render';
import { ViewState } from './state';
import type { SessionPayload } from './types';

/**
 * Wires the two-click loop onto the page: a canvas click selects the region
 * under the cursor, a range-button click submits the feedback.  No further
 * confirmation step exists.
 */
export function setupApp(root: Document, api: Api) {
  const canvas = root.getElementById('density-canvas') as HTMLCanvasElement;
  const rangeBar = root.getElementById('range-buttons') as HTMLElement;
  const totalEl = root.getElementById('predicted-total') as HTMLElement;
  const gtEl = root.getElementById('gt-total') as HTMLElement;
  const statusEl = root.getElementById('status') as HTMLElement;
  const historyEl = root.getElementById('history') as HTMLElement;
  const selectionEl = root.getElementById('selection') as HTMLElement;
  const newSessionBtn = root.getElementById('new-session') as HTMLButtonElement;
  const dotCountInput = root.getElementById('dot-count') as HTMLInputElement;
  const miscalSelect = root.getElementById('miscal') as HTMLSelectElement;

  let view: ViewState | null = null;
  let inFlight = false;

  const ctx = canvas.getContext('2d');

  function redraw() {
    if (view && ctx) renderOverlay(ctx, view);
  }

  function setStatus(text: string) {
    statusEl.textContent = text;
  }

  function renderPanels() {
    if (!view) return;
    const s = view.state;
    totalEl.textContent = s.predicted_total.toFixed(1);
    gtEl.textContent = s.gt_total === undefined ? '—' : s.gt_total.toFixed(1);
    historyEl.innerHTML = '';
    s.history.forEach((total, i) => {
      const li = root.createElement('li');
      li.textContent = `iteration ${i}: ${total.toFixed(1)}`;
      historyEl.appendChild(li);
    });
    const info = view.selectedInfo;
    selectionEl.textContent = info
      ? `region ${info.id} (${info.kind}, ~${info.sum.toFixed(2)} objects)`
      : 'click a region';
    for (const btn of Array.from(rangeBar.querySelectorAll('button'))) {
      (btn as HTMLButtonElement).disabled = !view.canSubmit || inFlight;
    }
  }

  function buildRangeButtons() {
    if (!view) return;
    rangeBar.innerHTML = '';
    for (const range of view.state.ranges) {
      const btn = root.createElement('button');
      btn.textContent = range.label;
      btn.dataset.rangeIndex = String(range.index);
      btn.addEventListener('click', () => submit(range.index));
      rangeBar.appendChild(btn);
    }
  }

  function applyPayload(payload: SessionPayload) {
    if (view && payload.session_id === view.sessionId) {
      view.apply(payload.state);
    } else {
      view = new ViewState(payload.session_id, payload.state);
      buildRangeButtons();
    }
    renderPanels();
    redraw();
  }

  async function submit(rangeIndex: number) {
    if (!view || !view.canSubmit || inFlight) return;
    const regionId = view.selectedRegion as number;
    inFlight = true;
    renderPanels();
    setStatus('adapting…');
    try {
      const payload = await api.submitFeedback(
        view.sessionId,
        regionId,
        rangeIndex,
        view.state.generation,
      );
      applyPayload(payload);
      const t = payload.timings;
      setStatus(
        t
          ? `iteration ${payload.state.iteration} done in ${(t.total_ms / 1000).toFixed(2)}s`
          : `iteration ${payload.state.iteration} done`,
      );
    } catch (err) {
      if (err instanceof StaleRegionError && view) {
        const payload = await api.getState(view.sessionId);
        applyPayload(payload);
        setStatus('segmentation changed — please reselect a region');
      } else {
        setStatus(`error: ${(err as Error).message}`);
      }
    } finally {
      inFlight = false;
      renderPanels();
    }
  }

  canvas.addEventListener('click', (ev: MouseEvent) => {
    if (!view || inFlight) return;
    const rect = canvas.getBoundingClientRect();
    const x = ev.clientX - rect.left;
    const y = ev.clientY - rect.top;
    const w = rect.width || canvas.width;
    const h = rect.height || canvas.height;
    const region = view.clickToRegion(x, y, w, h);
    view.selectRegion(region);
    setStatus(`selected region ${region} — now pick its count range`);
    renderPanels();
    redraw();
  });

  async function newSession() {
    const n = Math.max(0, Number(dotCountInput.value) || 12);
    const side = 128;
    const margin = 12;
    const dots: Array<[number, number]> = [];
    while (dots.length < n) {
      const x = margin + Math.random() * (side - 2 * margin);
      const y = margin + Math.random() * (side - 2 * margin);
      if (dots.every(([a, b]) => (a - x) ** 2 + (b - y) ** 2 >= 100)) {
        dots.push([x, y]);
      }
    }
    const miscal =
      miscalSelect.value === 'global_scale'
        ? { kind: 'global_scale', alpha: 2.0 }
        : miscalSelect.value === 'local_blob'
          ? { kind: 'local_blob', center: [side - 30, side - 30], radius: 5, magnitude: 3 }
          : { kind: 'none' };
    setStatus('creating session…');
    try {
      view = null;
      const payload = await api.createSession({
        scene: { height: side, width: side, sigma: 2.0, dots },
        miscal,
        seed: Math.floor(Math.random() * 10000),
      });
      applyPayload(payload);
      setStatus('session ready — two clicks per iteration: region, then range');
    } catch (err) {
      setStatus(`error: ${(err as Error).message}`);
    }
  }

  newSessionBtn.addEventListener('click', () => void newSession());

  return {
    getView: () => view,
    applyPayload,
    newSession,
  };
}

declare global {
  interface Window {
    icountApp?: ReturnType<typeof setupApp>;
  }
}

if (typeof window !== 'undefined' && typeof document !== 'undefined' && document.getElementById('density-canvas')) {
  window.icountApp = setupApp(document, new SessionApi(''));
}
