// Client-side mirror of the master's run-config validation, so obviously bad
// forms never leave the browser. The rule set must match the backend exactly.

import type { RunForm } from "./types";

export const SUPPORTED_RATES_HZ = [12.5, 26, 52, 104, 208, 416, 833];
export const SUPPORTED_RANGES_G = [2, 4, 8, 16];

export function validateRunForm(form: RunForm): string[] {
  const violations: string[] = [];
  if (form.test_type !== "TVT" && form.test_type !== "AVT") {
    violations.push("test_type unsupported");
  }
  if (!SUPPORTED_RATES_HZ.includes(form.fs_hz)) {
    violations.push("odr_hz unsupported");
  }
  if (!SUPPORTED_RANGES_G.includes(form.range_g)) {
    violations.push("range_g unsupported");
  }
  if (!Number.isInteger(form.duration_s) || form.duration_s < 1) {
    violations.push("duration_s must be >= 1");
  }
  return violations;
}
