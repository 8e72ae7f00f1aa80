import { describe, expect, it } from "vitest";

import { eePosition, jointOrigins } from "../src/core/fk.js";
import fixtures from "./fixtures.json";

describe("forward kinematics over the published chain", () => {
  it("reproduces the home-pose golden at all-zero joints", () => {
    const ee = eePosition(fixtures.chain, [0, 0, 0, 0, 0, 0, 0]);
    expect(ee.x).toBeCloseTo(fixtures.home_pose_pos[0], 12);
    expect(ee.y).toBeCloseTo(fixtures.home_pose_pos[1], 12);
    expect(ee.z).toBeCloseTo(fixtures.home_pose_pos[2], 12);
  });

  it("reproduces the ready-pose golden", () => {
    const ee = eePosition(fixtures.chain, fixtures.ready_q);
    expect(ee.x).toBeCloseTo(fixtures.ready_pose_pos[0], 12);
    expect(ee.y).toBeCloseTo(fixtures.ready_pose_pos[1], 12);
    expect(ee.z).toBeCloseTo(fixtures.ready_pose_pos[2], 12);
  });

  it("returns one origin per joint plus the end effector", () => {
    const pts = jointOrigins(fixtures.chain, fixtures.ready_q);
    expect(pts).toHaveLength(8);
    expect(pts[0]).toEqual({ x: 0, y: 0, z: 0 });
  });

  it("rejects mismatched joint counts", () => {
    expect(() => jointOrigins(fixtures.chain, [0, 0])).toThrow();
  });
});
