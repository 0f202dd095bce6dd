// Session controller: all console state and protocol sequencing, no DOM.
// The view renders whatever this holds; tests drive it headless.
//
// Invariants: displayed pose/guidance always echo the latest server state
// (the console never does pose math), stale responses are discarded by
// step counter, and at most one step request is in flight per session.

import { CreateRequest, Pose, ProtocolClient, ServerMsg, StateMsg } from "./protocol.js";

export interface StepSizes {
  mm: number;
  deg: number;
}

export interface TranscriptEntry {
  delta: Pose;
}

export interface ConsoleState {
  connected: boolean;
  session: number | null;
  lastState: StateMsg | null;
  showGroundTruth: boolean;
  stepSizes: StepSizes;
  banner: string | null;
}

// One key per signed axis; shift selects the negative direction for
// letters, distinct keys used here to keep the mapping explicit.
const KEY_AXIS: Record<string, [number, number]> = {
  d: [0, +1], a: [0, -1],   // x
  w: [1, -1], s: [1, +1],   // y (screen up = -y)
  e: [2, +1], q: [2, -1],   // z
  j: [3, +1], l: [3, -1],   // rx
  i: [4, +1], k: [4, -1],   // ry
  u: [5, +1], o: [5, -1],   // rz
};

export function keyToDelta(key: string, sizes: StepSizes): Pose | null {
  const hit = KEY_AXIS[key.toLowerCase()];
  if (!hit) return null;
  const [axis, sign] = hit;
  const delta: Pose = [0, 0, 0, 0, 0, 0];
  delta[axis] = sign * (axis < 3 ? sizes.mm : sizes.deg);
  return delta;
}

export class SessionController {
  state: ConsoleState = {
    connected: false,
    session: null,
    lastState: null,
    showGroundTruth: false,
    stepSizes: { mm: 2, deg: 2 },
    banner: null,
  };
  transcript: TranscriptEntry[] = [];
  createArgs: CreateRequest | null = null;
  private inFlight = false;
  private pendingDelta: Pose | null = null;
  private listeners: (() => void)[] = [];

  constructor(private client: ProtocolClient) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  private apply(msg: ServerMsg, expectStep?: number): boolean {
    if (msg.type === "error") {
      this.state.banner = msg.error;
      this.emit();
      return false;
    }
    if (msg.type === "created" || msg.type === "state") {
      // Discard anything older than what we already display.
      const cur = this.state.lastState;
      if (cur && msg.session === cur.session && msg.step < cur.step) return false;
      if (expectStep !== undefined && msg.step !== expectStep) return false;
      this.state.lastState = msg;
      this.state.session = msg.session;
      this.state.banner = null;
      this.emit();
      return true;
    }
    return true;
  }

  async connect(): Promise<boolean> {
    try {
      await this.client.info();
      this.state.connected = true;
      this.state.banner = null;
    } catch (e) {
      this.state.connected = false;
      this.state.banner = `connection failed: ${e}`;
    }
    this.emit();
    return this.state.connected;
  }

  async newSession(subjectSeed: number, plane: number, models: string[], startSeed: number): Promise<boolean> {
    this.createArgs = {
      type: "create",
      subject_seed: subjectSeed,
      plane,
      models,
      start_seed: startSeed,
    };
    this.transcript = [];
    this.state.lastState = null;
    const ok = this.apply(await this.client.send(this.createArgs));
    return ok;
  }

  /** Send one delta; queue-coalesce while a step is in flight. */
  async step(delta: Pose): Promise<boolean> {
    if (this.state.session === null) return false;
    if (this.inFlight) {
      this.pendingDelta = delta; // latest keypress wins
      return false;
    }
    this.inFlight = true;
    try {
      const resp = await this.client.send({
        type: "step",
        session: this.state.session,
        delta,
      });
      const ok = this.apply(resp);
      if (ok) this.transcript.push({ delta });
      return ok;
    } finally {
      this.inFlight = false;
      if (this.pendingDelta) {
        const next = this.pendingDelta;
        this.pendingDelta = null;
        void this.step(next);
      }
    }
  }

  async handleKey(key: string): Promise<boolean> {
    const delta = keyToDelta(key, this.state.stepSizes);
    if (!delta) return false;
    return this.step(delta);
  }

  /** Apply a model's current guidance, scaled by gain, as the next delta. */
  async followGuidance(model: string, gain: number): Promise<boolean> {
    const last = this.state.lastState;
    if (!last) return false;
    const g = last.guidance[model];
    if (!g) {
      this.state.banner = `model ${model} not in session`;
      this.emit();
      return false;
    }
    return this.step(g.map((v) => v * gain) as Pose);
  }

  toggleGroundTruth(): void {
    this.state.showGroundTruth = !this.state.showGroundTruth;
    this.emit();
  }

  setStepSizes(mm: number, deg: number): void {
    this.state.stepSizes = { mm, deg };
    this.emit();
  }

  async reset(): Promise<boolean> {
    if (this.state.session === null) return false;
    this.transcript = [];
    return this.apply(await this.client.send({ type: "reset", session: this.state.session }));
  }

  async close(): Promise<void> {
    if (this.state.session === null) return;
    await this.client.send({ type: "close", session: this.state.session });
    this.state.session = null;
    this.state.lastState = null;
    this.emit();
  }

  /** Replay the recorded transcript against a fresh session with the same
   * creation arguments; returns the final pose the server reports. */
  async replayTranscript(): Promise<Pose | null> {
    if (!this.createArgs) return null;
    let last = (await this.client.send(this.createArgs)) as StateMsg;
    if (last.type !== "created") return null;
    const sid = last.session;
    for (const entry of this.transcript) {
      const resp = await this.client.send({ type: "step", session: sid, delta: entry.delta });
      if (resp.type !== "state") return null;
      last = resp;
    }
    await this.client.send({ type: "close", session: sid });
    return last.pose;
  }
}

export function meanAbs(pose: Pose): number {
  return pose.reduce((acc, v) => acc + Math.abs(v), 0) / pose.length;
}
