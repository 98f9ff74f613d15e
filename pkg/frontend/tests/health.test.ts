import { describe, expect, it } from "vitest";

import { HealthTracker } from "../src/health";

const ok = { rate_hz: 208.0, gaps: 0, nominal_hz: 208 };

describe("HealthTracker", () => {
  it("is idle without health data", () => {
    expect(new HealthTracker().evaluate("0_1", undefined)).toBe("idle");
  });

  it("is green at nominal rate with stable gap count", () => {
    const tracker = new HealthTracker();
    expect(tracker.evaluate("0_1", ok)).toBe("green");
    expect(tracker.evaluate("0_1", ok)).toBe("green");
  });

  it("tolerates rate within one percent", () => {
    const tracker = new HealthTracker();
    expect(tracker.evaluate("0_1", { ...ok, rate_hz: 208 * 1.009 })).toBe("green");
    expect(tracker.evaluate("0_1", { ...ok, rate_hz: 208 * 0.991 })).toBe("green");
  });

  it("goes red when the rate drifts past one percent", () => {
    const tracker = new HealthTracker();
    expect(tracker.evaluate("0_1", { ...ok, rate_hz: 208 * 1.02 })).toBe("red");
  });

  it("goes red on new gaps and recovers when they stop growing", () => {
    const tracker = new HealthTracker();
    expect(tracker.evaluate("0_1", { ...ok, gaps: 2 })).toBe("green"); // baseline frame
    expect(tracker.evaluate("0_1", { ...ok, gaps: 3 })).toBe("red");
    expect(tracker.evaluate("0_1", { ...ok, gaps: 3 })).toBe("green");
  });

  it("tracks sensors independently", () => {
    const tracker = new HealthTracker();
    tracker.evaluate("0_1", { ...ok, gaps: 1 });
    tracker.evaluate("1_1", ok);
    expect(tracker.evaluate("0_1", { ...ok, gaps: 2 })).toBe("red");
    expect(tracker.evaluate("1_1", ok)).toBe("green");
  });

  it("reset clears gap baselines", () => {
    const tracker = new HealthTracker();
    tracker.evaluate("0_1", { ...ok, gaps: 5 });
    tracker.reset();
    expect(tracker.evaluate("0_1", { ...ok, gaps: 7 })).toBe("green");
  });
});
