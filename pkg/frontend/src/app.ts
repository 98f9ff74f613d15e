// Dashboard wiring: run control form, connection banner, per-sensor health
// badges, and rolling waveform charts, all driven by the master's API.
// All state here derives from API responses; the UI never mutates data.

import { ApiError, FetchFn, MasterApi } from "./api";
import { SensorChart } from "./charts";
import { BadgeState, HealthTracker } from "./health";
import { LiveFeed, WebSocketCtor } from "./live";
import type { LiveFrame, RunForm, StatusSnapshot } from "./types";
import { SUPPORTED_RANGES_G, SUPPORTED_RATES_HZ, validateRunForm } from "./validate";

export interface DashboardOptions {
  apiBase: string; // e.g. http://127.0.0.1:8470
  fetchFn?: FetchFn;
  wsCtor?: WebSocketCtor;
  statusPollMs?: number;
}

function sensorLabel(slaveId: number, mux: number): string {
  return `${mux}_${slaveId}`;
}

export class Dashboard {
  readonly api: MasterApi;
  private feed: LiveFeed | null = null;
  private readonly health = new HealthTracker();
  private charts = new Map<string, SensorChart>();
  private activeRun: number | null = null;
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private readonly statusPollMs: number;

  constructor(
    private readonly root: HTMLElement,
    private readonly options: DashboardOptions,
  ) {
    this.api = new MasterApi(options.apiBase, options.fetchFn ?? fetch.bind(globalThis));
    this.statusPollMs = options.statusPollMs ?? 1000;
    this.buildSkeleton();
  }

  private buildSkeleton(): void {
    const doc = this.root.ownerDocument;
    this.root.innerHTML = `
      <header>
        <span id="conn-banner" class="banner disconnected">disconnected</span>
        <span id="master-state">-</span>
        <span id="run-label"></span>
      </header>
      <form id="run-form">
        <select id="test-type"><option>TVT</option><option>AVT</option></select>
        <select id="fs"></select>
        <select id="range"></select>
        <input id="duration" type="number" value="60" min="1" step="1">
        <button id="start-btn" type="submit">start run</button>
        <button id="stop-btn" type="button" disabled>stop run</button>
        <span id="form-error" role="alert"></span>
      </form>
      <div id="badges"></div>
      <div id="charts"></div>
    `;
    const fs = this.root.querySelector("#fs") as HTMLSelectElement;
    for (const rate of SUPPORTED_RATES_HZ) {
      const opt = doc.createElement("option");
      opt.value = String(rate);
      opt.textContent = `${rate} Hz`;
      if (rate === 208) opt.selected = true;
      fs.appendChild(opt);
    }
    const range = this.root.querySelector("#range") as HTMLSelectElement;
    for (const g of SUPPORTED_RANGES_G) {
      const opt = doc.createElement("option");
      opt.value = String(g);
      opt.textContent = `±${g} g`;
      range.appendChild(opt);
    }
    const form = this.root.querySelector("#run-form") as HTMLFormElement;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submitRun();
    });
    (this.root.querySelector("#stop-btn") as HTMLButtonElement).addEventListener("click", () => {
      void this.stopRun();
    });
  }

  async start(): Promise<void> {
    await this.buildSensorGrid();
    this.feed = new LiveFeed(
      this.options.apiBase.replace(/^http/, "ws") + "/api/v1/live",
      {
        onFrame: (frame) => this.onFrame(frame),
        onConnectionChange: (up) => this.setConnected(up),
      },
      this.options.wsCtor,
    );
    this.feed.connect();
    await this.pollStatus();
    this.pollTimer = setInterval(() => void this.pollStatus(), this.statusPollMs);
  }

  stop(): void {
    if (this.pollTimer !== null) clearInterval(this.pollTimer);
    this.feed?.close();
  }

  chartPointCount(sensor: string, axis: string): number {
    return this.charts.get(sensor)?.pointCount(axis) ?? 0;
  }

  sensorLabels(): string[] {
    return [...this.charts.keys()];
  }

  private async buildSensorGrid(): Promise<void> {
    const doc = this.root.ownerDocument;
    const slaves = await this.api.slaves();
    const badges = this.root.querySelector("#badges") as HTMLElement;
    const charts = this.root.querySelector("#charts") as HTMLElement;
    badges.innerHTML = "";
    charts.innerHTML = "";
    this.charts = new Map();
    for (const slave of slaves) {
      for (const mux of slave.sensors) {
        const label = sensorLabel(slave.slave_id, mux);
        const badge = doc.createElement("span");
        badge.className = "badge idle";
        badge.dataset.sensor = label;
        badge.textContent = `${label}: -`;
        badges.appendChild(badge);

        const canvas = doc.createElement("canvas");
        canvas.width = 480;
        canvas.height = 120;
        canvas.dataset.sensor = label;
        charts.appendChild(canvas);
        this.charts.set(label, new SensorChart(label, canvas));
      }
    }
  }

  private setConnected(up: boolean): void {
    const banner = this.root.querySelector("#conn-banner") as HTMLElement;
    banner.textContent = up ? "live" : "disconnected";
    banner.className = `banner ${up ? "live" : "disconnected"}`;
  }

  private onFrame(frame: LiveFrame): void {
    for (const [sensor, chart] of this.charts) {
      chart.ingest(frame.t_us, frame.channels);
      this.renderBadge(sensor, this.health.evaluate(sensor, frame.health[sensor]), frame);
    }
  }

  private renderBadge(sensor: string, state: BadgeState, frame: LiveFrame): void {
    const badge = this.root.querySelector(`[data-sensor="${sensor}"].badge`) as HTMLElement | null;
    if (!badge) return;
    badge.className = `badge ${state}`;
    const health = frame.health[sensor];
    badge.textContent = health
      ? `${sensor}: ${health.rate_hz.toFixed(1)} Hz, ${health.gaps} gaps`
      : `${sensor}: -`;
  }

  private async pollStatus(): Promise<void> {
    let status: StatusSnapshot;
    try {
      status = await this.api.status();
    } catch {
      return; // banner already reflects WS connectivity; retry next tick
    }
    this.activeRun = status.active_run;
    (this.root.querySelector("#master-state") as HTMLElement).textContent = status.state;
    (this.root.querySelector("#run-label") as HTMLElement).textContent =
      status.active_run !== null ? `run ${status.active_run}` : "";
    const running = status.active_run !== null;
    (this.root.querySelector("#start-btn") as HTMLButtonElement).disabled = running;
    (this.root.querySelector("#stop-btn") as HTMLButtonElement).disabled = !running;
  }

  private readForm(): RunForm {
    const get = (id: string) => this.root.querySelector(id) as HTMLInputElement | HTMLSelectElement;
    return {
      test_type: get("#test-type").value as RunForm["test_type"],
      fs_hz: Number(get("#fs").value),
      range_g: Number(get("#range").value),
      duration_s: Number(get("#duration").value),
    };
  }

  private setFormError(text: string): void {
    (this.root.querySelector("#form-error") as HTMLElement).textContent = text;
  }

  async submitRun(): Promise<void> {
    const form = this.readForm();
    const violations = validateRunForm(form);
    if (violations.length > 0) {
      this.setFormError(violations.join("; "));
      return;
    }
    this.setFormError("");
    try {
      const { run_id } = await this.api.startRun(form);
      this.health.reset();
      this.activeRun = run_id;
      await this.pollStatus();
    } catch (err) {
      this.setFormError(err instanceof ApiError ? err.message : String(err));
    }
  }

  async stopRun(): Promise<void> {
    if (this.activeRun === null) return;
    try {
      await this.api.stopRun(this.activeRun);
      await this.pollStatus();
    } catch (err) {
      this.setFormError(err instanceof ApiError ? err.message : String(err));
    }
  }
}
