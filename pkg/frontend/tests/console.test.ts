// Scripted console session against the real Python service: create a
// session, steer with keys, toggle ground truth, follow the model's
// guidance, and verify the transcript replays to the exact final pose.

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { readFileSync } from "node:fs";
import * as path from "node:path";

import { SessionController, keyToDelta, meanAbs } from "../src/controller.js";
import { ProtocolClient, StateMsg } from "../src/protocol.js";

const ROOT = path.resolve(__dirname, "..", "..");

let server: ChildProcess;
let client: ProtocolClient;
let subjectSeed: number;

beforeAll(async () => {
  const fixture = spawnSync(
    "python3",
    [path.join(ROOT, "scripts", "prepare_console_fixture.py")],
    { cwd: ROOT, encoding: "utf-8", timeout: 900_000 },
  );
  if (fixture.status !== 0) {
    throw new Error(`fixture build failed:\n${fixture.stdout}\n${fixture.stderr}`);
  }
  const metaPath = fixture.stdout.trim().split("\n").pop()!;
  const meta = JSON.parse(readFileSync(metaPath, "utf-8"));
  subjectSeed = meta.train_subjects[0];

  server = spawn(
    "python3",
    ["-m", "probeguide", "serve", "--ckpt-dreamer", meta.checkpoint, "--port", "0"],
    { cwd: ROOT, env: { ...process.env, PYTHONPATH: path.join(ROOT, "src") } },
  );
  const port = await new Promise<number>((resolve, reject) => {
    let buf = "";
    const onData = (chunk: Buffer) => {
      buf += chunk.toString();
      const m = buf.match(/127\.0\.0\.1:(\d+)/);
      if (m) resolve(Number(m[1]));
    };
    server.stdout!.on("data", onData);
    server.stderr!.on("data", (c: Buffer) => (buf += c.toString()));
    server.on("exit", () => reject(new Error(`server exited early:\n${buf}`)));
    setTimeout(() => reject(new Error(`server never reported a port:\n${buf}`)), 60_000);
  });
  client = new ProtocolClient(`http://127.0.0.1:${port}/`);
}, 900_000);

afterAll(() => {
  server?.kill();
});

describe("key mapping", () => {
  it("maps +x key to a pure x delta of the configured step", () => {
    expect(keyToDelta("d", { mm: 2, deg: 3 })).toEqual([2, 0, 0, 0, 0, 0]);
    expect(keyToDelta("a", { mm: 2, deg: 3 })).toEqual([-2, 0, 0, 0, 0, 0]);
    expect(keyToDelta("i", { mm: 2, deg: 3 })).toEqual([0, 0, 0, 0, 3, 0]);
    expect(keyToDelta("zz", { mm: 2, deg: 3 })).toBeNull();
  });
});

describe("steered session", () => {
  it("connects, steers, follows guidance, and replays exactly", async () => {
    const ctrl = new SessionController(client);
    expect(await ctrl.connect()).toBe(true);

    expect(await ctrl.newSession(subjectSeed, 1, ["dreamer"], 4)).toBe(true);
    const created = ctrl.state.lastState as StateMsg;
    expect(created.type).toBe("created");
    const startRemaining = meanAbs(created.remaining);
    expect(startRemaining).toBeGreaterThan(0);

    // A few keyboard nudges (each awaited; the transcript records all).
    ctrl.setStepSizes(2, 2);
    for (const key of ["d", "w", "e", "i", "o", "a"]) {
      expect(await ctrl.handleKey(key)).toBe(true);
    }
    expect(ctrl.transcript.length).toBe(6);

    // Ground-truth toggle is pure view state.
    expect(ctrl.state.showGroundTruth).toBe(false);
    ctrl.toggleGroundTruth();
    expect(ctrl.state.showGroundTruth).toBe(true);
    ctrl.toggleGroundTruth();

    // Follow the model's guidance thirty times.
    for (let i = 0; i < 30; i++) {
      expect(await ctrl.followGuidance("dreamer", 1.0)).toBe(true);
    }
    const final = ctrl.state.lastState as StateMsg;
    const finalRemaining = meanAbs(final.remaining);
    expect(finalRemaining).toBeLessThanOrEqual(0.5 * startRemaining);

    // The console never computes poses: replaying the recorded deltas
    // against a fresh session must land on the identical pose.
    const replayed = await ctrl.replayTranscript();
    expect(replayed).toEqual(final.pose);

    await ctrl.close();
  }, 600_000);

  it("rejects stale state and reports server errors as banners", async () => {
    const ctrl = new SessionController(client);
    await ctrl.connect();
    await ctrl.newSession(subjectSeed, 0, ["dreamer"], 9);
    const resp = await client.send({ type: "step", session: 999999, delta: [0, 0, 0, 0, 0, 0] });
    expect(resp.type).toBe("error");
    await ctrl.close();
  }, 120_000);
});
