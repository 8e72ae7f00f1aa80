/** Browser entry point: wires the session core to the DOM and a WebSocket. */

import { DhJoint, jointOrigins } from "../core/fk.js";
import { InputMapper } from "../core/input.js";
import { ClientMessage, ServerMessage, Vec3 } from "../core/protocol.js";
import { Viewport, View, projectPolyline, workspaceRect, project } from "../core/render.js";
import { Transport, UiSession } from "../core/session.js";

interface FleetGeometry {
  robots: Array<{
    id: string;
    task: string;
    chain: DhJoint[];
    ready_q: number[];
    workspace: { min: number[]; max: number[] };
  }>;
  teleop: { rate_hz: number };
}

class WsTransport implements Transport {
  constructor(private ws: WebSocket) {}
  send(msg: ClientMessage): void {
    if (this.ws.readyState === WebSocket.OPEN) this.ws.send(JSON.stringify(msg));
  }
  close(): void {
    this.ws.close();
  }
}

function vec(a: number[]): Vec3 {
  return { x: a[0], y: a[1], z: a[2] };
}

async function main(): Promise<void> {
  const status = document.getElementById("status")!;
  const latency = document.getElementById("latency")!;
  const banner = document.getElementById("banner")!;
  const joinBtn = document.getElementById("join") as HTMLButtonElement;
  const clutchBtn = document.getElementById("clutch") as HTMLButtonElement;
  const topCanvas = document.getElementById("view-top") as HTMLCanvasElement;
  const sideCanvas = document.getElementById("view-side") as HTMLCanvasElement;

  const geometry: FleetGeometry = await (await fetch("/fleet.json")).json();
  const robotById = new Map(geometry.robots.map((r) => [r.id, r]));
  let activeRobot = geometry.robots[0];

  const ws = new WebSocket(`ws://${location.host}/ws`);
  const session = new UiSession(new WsTransport(ws), {
    userId: `web-${Math.random().toString(36).slice(2, 8)}`,
    task: "any",
    rateHz: geometry.teleop.rate_hz,
  });
  const input = new InputMapper();

  ws.onmessage = (ev) => session.handleMessage(JSON.parse(ev.data) as ServerMessage);
  ws.onclose = () => session.handleDisconnect();
  joinBtn.onclick = () => {
    session.join();
    joinBtn.disabled = true;
  };

  // clutch: hold spacebar or the on-screen button
  const setClutch = (v: boolean) => {
    session.setClutch(v);
    clutchBtn.classList.toggle("engaged", v);
  };
  window.addEventListener("keydown", (e) => {
    if (e.code === "Space") setClutch(true);
    if (e.key.startsWith("Arrow")) {
      input.arrowKey(e.key as Parameters<InputMapper["arrowKey"]>[0]);
      e.preventDefault();
    }
  });
  window.addEventListener("keyup", (e) => {
    if (e.code === "Space") setClutch(false);
  });
  clutchBtn.onpointerdown = () => setClutch(true);
  clutchBtn.onpointerup = () => setClutch(false);

  let dragging = false;
  topCanvas.onpointerdown = (e) => {
    dragging = true;
    topCanvas.setPointerCapture(e.pointerId);
  };
  topCanvas.onpointerup = () => (dragging = false);
  topCanvas.onpointermove = (e) => {
    if (dragging) input.pointerDrag(e.movementX, e.movementY);
  };
  topCanvas.onwheel = (e) => {
    input.wheel(e.deltaY);
    e.preventDefault();
  };
  window.addEventListener("deviceorientation", (e) => {
    if (e.alpha !== null && e.beta !== null && e.gamma !== null) {
      input.deviceOrientation(e.alpha, e.beta, e.gamma);
    }
  });

  // the operator's intended target: engaged deltas accumulated on top of
  // the arm pose seen at engagement
  let intendedTarget: Vec3 | null = null;

  // control-rate sampling loop, decoupled from the display refresh
  setInterval(() => {
    if (session.clutchEngaged) {
      if (intendedTarget === null && session.latestState) {
        intendedTarget = { ...session.latestState.eePos };
      }
      const d = input.consumeDelta();
      if (intendedTarget !== null) {
        intendedTarget = {
          x: intendedTarget.x + d.x,
          y: intendedTarget.y + d.y,
          z: intendedTarget.z + d.z,
        };
      }
      session.pushDelta(d.x, d.y, d.z);
    } else {
      input.consumeDelta();
    }
    session.setOrientation(input.orientation());
    session.tick();
  }, 1000 / geometry.teleop.rate_hz);

  function drawView(canvas: HTMLCanvasElement, view: View): void {
    const ctx = canvas.getContext("2d")!;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    const robot = activeRobot;
    const ws_ = robot.workspace;
    const center = {
      x: (ws_.min[0] + ws_.max[0]) / 2,
      y: (ws_.min[1] + ws_.max[1]) / 2,
      z: (ws_.min[2] + ws_.max[2]) / 2,
    };
    const vp: Viewport = {
      widthPx: canvas.width,
      heightPx: canvas.height,
      spanM: 1.6,
      center,
    };
    const rect = workspaceRect(vec(ws_.min), vec(ws_.max), view, vp);
    ctx.strokeStyle = "#777";
    ctx.setLineDash([4, 4]);
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
    ctx.setLineDash([]);

    const q = session.latestState?.joints ?? robot.ready_q;
    const pts = projectPolyline(jointOrigins(robot.chain, q), view, vp);
    ctx.strokeStyle = session.stateIsStale() ? "#b44" : "#2a6";
    ctx.lineWidth = 3;
    ctx.beginPath();
    pts.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
    for (const p of pts) {
      ctx.beginPath();
      ctx.arc(p.x, p.y, 4, 0, 2 * Math.PI);
      ctx.fillStyle = "#234";
      ctx.fill();
    }
    if (session.latestState) {
      const ee = project(session.latestState.eePos, view, vp);
      ctx.beginPath();
      ctx.arc(ee.x, ee.y, 6, 0, 2 * Math.PI);
      ctx.strokeStyle = "#d80";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
    if (intendedTarget !== null) {
      const tgt = project(intendedTarget, view, vp);
      ctx.beginPath();
      ctx.moveTo(tgt.x - 6, tgt.y);
      ctx.lineTo(tgt.x + 6, tgt.y);
      ctx.moveTo(tgt.x, tgt.y - 6);
      ctx.lineTo(tgt.x, tgt.y + 6);
      ctx.strokeStyle = "#c33";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
  }

  function render(): void {
    const ph = session.phase;
    if (ph.kind === "connecting") status.textContent = "connecting";
    else if (ph.kind === "queued") status.textContent = `queued (position ${ph.position})`;
    else if (ph.kind === "active") {
      status.textContent = `controlling ${ph.robotId} (${ph.task})`;
      activeRobot = robotById.get(ph.robotId) ?? activeRobot;
    } else status.textContent = `session ended: ${ph.reason}; reload to rejoin`;
    latency.textContent =
      session.latencyMs === null ? "-" : `${session.latencyMs.toFixed(0)} ms`;
    latency.classList.toggle("stale", session.stateIsStale());
    banner.textContent = session.safetyBanner ?? "";
    drawView(topCanvas, "top");
    drawView(sideCanvas, "side");
    requestAnimationFrame(render);
  }
  requestAnimationFrame(render);
}

main().catch((e) => {
  document.getElementById("status")!.textContent = `failed to start: ${e}`;
});
