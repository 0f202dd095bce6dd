// Wire protocol types and the HTTP client.  The server speaks the same
// JSON messages over a raw socket and over HTTP POST; a browser uses the
// HTTP mirror, one request per message.

export type Pose = [number, number, number, number, number, number];

export interface FrameData {
  h: number;
  w: number;
  pixels_b64: string;
}

export interface StateMsg {
  type: "created" | "state";
  session: number;
  step: number;
  pose: Pose;
  frame: FrameData;
  guidance: Record<string, Pose>;
  remaining: Pose;
}

export interface ErrorMsg {
  type: "error";
  error: string;
}

export interface ClosedMsg {
  type: "closed";
  session: number;
}

export interface InfoMsg {
  type: "info";
  models: string[];
  sessions: number[];
}

export type ServerMsg = StateMsg | ErrorMsg | ClosedMsg | InfoMsg;

export interface CreateRequest {
  type: "create";
  subject_seed: number;
  plane: number;
  models: string[];
  start_seed: number;
}

export class ProtocolClient {
  constructor(readonly url: string) {}

  async send(msg: object): Promise<ServerMsg> {
    const resp = await fetch(this.url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(msg),
    });
    return (await resp.json()) as ServerMsg;
  }

  async info(): Promise<InfoMsg> {
    const resp = await fetch(this.url);
    return (await resp.json()) as InfoMsg;
  }
}

export function decodePixels(frame: FrameData): Uint8Array {
  const raw = typeof atob === "function"
    ? atob(frame.pixels_b64)
    : Buffer.from(frame.pixels_b64, "base64").toString("binary");
  const out = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) out[i] = raw.charCodeAt(i);
  return out;
}
