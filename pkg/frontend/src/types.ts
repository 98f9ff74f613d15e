// Shapes of the master's HTTP/WS payloads.

export interface SensorHealth {
  rate_hz: number;
  gaps: number;
  nominal_hz: number;
}

export interface LiveFrame {
  t_us: number;
  channels: Record<string, number[]>;
  health: Record<string, SensorHealth>;
}

export interface SlaveInfo {
  slave_id: number;
  sensors: number[];
  connected: boolean;
}

export interface StatusSnapshot {
  state: string;
  active_run: number | null;
  slaves: Record<string, { connected: boolean; sensors: number[]; samples_reported: number }>;
}

export interface RunForm {
  test_type: "TVT" | "AVT";
  fs_hz: number;
  range_g: number;
  duration_s: number;
}

export interface RunInfo {
  run_id: number;
  status: string;
  integrity: Record<string, { expected: number; received: number; gap_count: number }>;
}
