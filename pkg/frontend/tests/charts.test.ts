import { describe, expect, it } from "vitest";

import { RollingTrace, SensorChart } from "../src/charts";

describe("RollingTrace", () => {
  it("spreads decimated values across the frame interval", () => {
    const trace = new RollingTrace();
    trace.append(1_000_000, [1, 2, 3, 4], 400_000);
    expect(trace.points).toHaveLength(4);
    expect(trace.points[3].t_us).toBe(1_000_000);
    expect(trace.points[0].t_us).toBe(700_000);
    expect(trace.points.map((p) => p.value)).toEqual([1, 2, 3, 4]);
  });

  it("drops points older than the ten second window", () => {
    const trace = new RollingTrace();
    trace.append(1_000_000, [1], 100_000);
    trace.append(12_000_000, [2], 100_000);
    expect(trace.points.map((p) => p.value)).toEqual([2]);
  });
});

describe("SensorChart", () => {
  it("accumulates points per axis from matching channels only", () => {
    const canvas = document.createElement("canvas");
    const chart = new SensorChart("0_1", canvas);
    chart.ingest(100_000, {
      "0_1_x": [0.1, 0.2],
      "0_1_y": [0.3],
      "0_1_z": [1.0, 1.1, 1.2],
      "1_1_x": [9.9], // another sensor; ignored by this chart
    });
    expect(chart.pointCount("x")).toBe(2);
    expect(chart.pointCount("y")).toBe(1);
    expect(chart.pointCount("z")).toBe(3);
    chart.ingest(200_000, { "0_1_x": [0.4] });
    expect(chart.pointCount("x")).toBe(3);
  });
});
