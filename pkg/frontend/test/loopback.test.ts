/**
 * Loopback session against the real service: the UI core joins behind a
 * scripted occupant, gets promoted, drags the arm to a target, verifies the
 * clutch isolates disengaged motion, and reads the injected latency back.
 */

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ClientMessage } from "../src/core/protocol.js";
import { Transport, UiSession } from "../src/core/session.js";
import fixtures from "./fixtures.json";

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

async function freePort(): Promise<number> {
  return new Promise((resolve) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const port = (srv.address() as net.AddressInfo).port;
      srv.close(() => resolve(port));
    });
  });
}

async function waitForPort(port: number, timeoutMs = 15000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const ok = await new Promise<boolean>((resolve) => {
      const sock = net.connect(port, "127.0.0.1");
      sock.once("connect", () => {
        sock.end();
        resolve(true);
      });
      sock.once("error", () => resolve(false));
    });
    if (ok) return;
    await sleep(150);
  }
  throw new Error(`port ${port} never opened`);
}

class TcpTransport implements Transport {
  constructor(private sock: net.Socket) {}
  send(msg: ClientMessage): void {
    this.sock.write(JSON.stringify(msg) + "\n");
  }
  close(): void {
    this.sock.end();
  }
}

const INJECTED_DELAY_MS = 200;

describe("loopback human session", () => {
  let dir: string;
  let port: number;
  let fleetd: ChildProcess;
  let occupant: ChildProcess;

  beforeAll(async () => {
    dir = mkdtempSync(path.join(os.tmpdir(), "telefleet-ui-"));
    port = await freePort();
    writeFileSync(
      path.join(dir, "fleet.yaml"),
      [
        "robots:",
        "  - id: r0",
        "    task: object_search",
        "    seed: 1",
        "teleop: {rate_hz: 50, gain: 1.0}",
        "coordination: {heartbeat_timeout_s: 5.0, time_limit_s: 120.0}",
        "",
      ].join("\n"),
    );
    writeFileSync(
      path.join(dir, "occupant.yaml"),
      [
        "user_id: occupant",
        "task: object_search",
        "trajectory: {kind: random_walk, step_m: 0.001}",
        "behavior: {kind: complete_after, after_s: 1.5}",
        "",
      ].join("\n"),
    );
    fleetd = spawn(
      "fleetd",
      [
        "--robots", path.join(dir, "fleet.yaml"),
        "--port", String(port),
        "--log-dir", path.join(dir, "logs"),
        "--inject-delay-ms", String(INJECTED_DELAY_MS),
      ],
      { stdio: "ignore" },
    );
    await waitForPort(port);
    occupant = spawn(
      "teleop-client",
      ["--script", path.join(dir, "occupant.yaml"), "--server", `127.0.0.1:${port}`],
      { stdio: "ignore" },
    );
    await sleep(400); // let the occupant take the robot
  }, 30000);

  afterAll(() => {
    occupant?.kill();
    fleetd?.kill();
  });

  it("queues, activates, drags, isolates the clutch, and reads latency", async () => {
    const sock = net.connect(port, "127.0.0.1");
    await new Promise((resolve) => sock.once("connect", resolve));
    const session = new UiSession(new TcpTransport(sock), {
      userId: "webuser",
      task: "any",
    });
    let buffer = "";
    sock.on("data", (chunk) => {
      buffer += chunk.toString();
      let nl;
      while ((nl = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, nl);
        buffer = buffer.slice(nl + 1);
        if (line.trim()) session.handleMessage(JSON.parse(line));
      }
    });
    session.join();

    // behind the occupant first
    const sawQueue = await (async () => {
      const deadline = Date.now() + 5000;
      while (Date.now() < deadline) {
        if (session.phase.kind === "queued") return session.phase.position;
        if (session.phase.kind === "active") return null; // occupant already done
        session.tick();
        await sleep(20);
      }
      throw new Error("never queued or activated");
    })();
    if (sawQueue !== null) expect(sawQueue).toBe(0);

    // promoted once the occupant finishes
    {
      const deadline = Date.now() + 10000;
      while (session.phase.kind !== "active" && Date.now() < deadline) {
        session.tick();
        await sleep(20);
      }
    }
    expect(session.phase.kind).toBe("active");

    // wait for the state stream
    {
      const deadline = Date.now() + 5000;
      while (session.latestState === null && Date.now() < deadline) {
        session.tick();
        await sleep(20);
      }
    }
    expect(session.latestState).not.toBeNull();
    const startX = session.latestState!.eePos.x;

    // engaged drag: +0.06 m along x over 1.2 s, then settle
    session.setClutch(true);
    for (let i = 0; i < 60; i++) {
      session.pushDelta(0.001, 0, 0);
      session.tick();
      await sleep(20);
    }
    for (let i = 0; i < 90; i++) {
      session.tick();
      await sleep(20);
    }
    const draggedX = session.latestState!.eePos.x;
    expect(draggedX - startX).toBeGreaterThan(0.04);
    expect(draggedX - startX).toBeLessThan(0.08);
    const jointsBefore = [...session.latestState!.joints];

    // disengaged wild drag: the arm must not move
    session.setClutch(false);
    for (let i = 0; i < 60; i++) {
      session.pushDelta(0.2, -0.1, 0.15);
      session.tick();
      await sleep(20);
    }
    const jointsAfter = [...session.latestState!.joints];
    for (let i = 0; i < 7; i++) {
      expect(Math.abs(jointsAfter[i] - jointsBefore[i])).toBeLessThan(2e-3);
    }

    // latency readout reflects the injected delay
    expect(session.latencyMs).not.toBeNull();
    expect(Math.abs(session.latencyMs! - INJECTED_DELAY_MS)).toBeLessThanOrEqual(50);

    session.quit();
    {
      const deadline = Date.now() + 5000;
      while (session.phase.kind !== "ended" && Date.now() < deadline) {
        await sleep(20);
      }
    }
    expect(session.phase).toEqual({ kind: "ended", reason: "user_quit" });
    sock.end();
  }, 60000);
});
