// Rolling waveform store and canvas painter. One chart per sensor overlays
// its x/y/z channels over the last 10 seconds of decimated samples.

const WINDOW_US = 10_000_000;
const TRACE_COLORS: Record<string, string> = { x: "#4e9af1", y: "#f19a4e", z: "#6fcf6f" };

export interface TracePoint {
  t_us: number;
  value: number;
}

export class RollingTrace {
  readonly points: TracePoint[] = [];

  append(t_us: number, values: number[], frameSpanUs: number): void {
    // decimated batch: spread the values evenly across the frame interval
    const n = values.length;
    for (let i = 0; i < n; i++) {
      const t = t_us - frameSpanUs + Math.round(((i + 1) * frameSpanUs) / n);
      this.points.push({ t_us: t, value: values[i] });
    }
    this.trim(t_us);
  }

  trim(now_us: number): void {
    const cutoff = now_us - WINDOW_US;
    let drop = 0;
    while (drop < this.points.length && this.points[drop].t_us < cutoff) drop++;
    if (drop > 0) this.points.splice(0, drop);
  }
}

export class SensorChart {
  private traces = new Map<string, RollingTrace>();
  private lastFrameUs = 0;

  constructor(
    readonly sensor: string,
    private readonly canvas: HTMLCanvasElement,
  ) {}

  ingest(frameUs: number, channels: Record<string, number[]>): void {
    const span = this.lastFrameUs > 0 ? frameUs - this.lastFrameUs : 100_000;
    this.lastFrameUs = frameUs;
    for (const axis of ["x", "y", "z"]) {
      const values = channels[`${this.sensor}_${axis}`];
      if (!values || values.length === 0) continue;
      let trace = this.traces.get(axis);
      if (!trace) {
        trace = new RollingTrace();
        this.traces.set(axis, trace);
      }
      trace.append(frameUs, values, span);
    }
    this.paint(frameUs);
  }

  pointCount(axis: string): number {
    return this.traces.get(axis)?.points.length ?? 0;
  }

  private paint(nowUs: number): void {
    let ctx: CanvasRenderingContext2D | null;
    try {
      ctx = this.canvas.getContext("2d");
    } catch {
      return; // headless test environments have no 2D backend
    }
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    ctx.strokeStyle = "#333";
    ctx.strokeRect(0, 0, width, height);

    let min = Infinity;
    let max = -Infinity;
    for (const trace of this.traces.values()) {
      for (const p of trace.points) {
        if (p.value < min) min = p.value;
        if (p.value > max) max = p.value;
      }
    }
    if (!isFinite(min) || max === min) return;
    const pad = 0.05 * (max - min);
    min -= pad;
    max += pad;

    for (const [axis, trace] of this.traces) {
      ctx.strokeStyle = TRACE_COLORS[axis];
      ctx.beginPath();
      let started = false;
      for (const p of trace.points) {
        const x = width * (1 - (nowUs - p.t_us) / WINDOW_US);
        const y = height * (1 - (p.value - min) / (max - min));
        if (!started) {
          ctx.moveTo(x, y);
          started = true;
        } else {
          ctx.lineTo(x, y);
        }
      }
      ctx.stroke();
    }
  }
}
