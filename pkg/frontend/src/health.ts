// Per-sensor health badge rule: green means the achieved rate is within 1%
// of nominal AND no gap records appeared since the previous frame.

import type { SensorHealth } from "./types";

export type BadgeState = "green" | "red" | "idle";

export const RATE_TOLERANCE = 0.01;

export class HealthTracker {
  private lastGaps = new Map<string, number>();

  evaluate(sensor: string, health: SensorHealth | undefined): BadgeState {
    if (health === undefined || health.nominal_hz <= 0) {
      return "idle";
    }
    const previous = this.lastGaps.get(sensor);
    this.lastGaps.set(sensor, health.gaps);
    const newGaps = previous !== undefined && health.gaps > previous;
    const rateOk =
      Math.abs(health.rate_hz - health.nominal_hz) <= RATE_TOLERANCE * health.nominal_hz;
    return rateOk && !newGaps ? "green" : "red";
  }

  reset(): void {
    this.lastGaps.clear();
  }
}
