import { describe, expect, it } from 'vitest';

import { orbitPosition, orbitToPose, rotateOrbit, zoomOrbit } from '../src/orbit.js';
import type { OrbitParams } from '../src/state.js';

const orbit: OrbitParams = {
  target: [1, 2, 3],
  distance: 6,
  azimuth: 0.8,
  elevation: 0.3,
};

function matmul(R: number[], v: number[]): number[] {
  return [
    R[0] * v[0] + R[1] * v[1] + R[2] * v[2],
    R[3] * v[0] + R[4] * v[1] + R[5] * v[2],
    R[6] * v[0] + R[7] * v[1] + R[8] * v[2],
  ];
}

describe('orbitToPose', () => {
  it('produces an orthonormal rotation', () => {
    const pose = orbitToPose(orbit, 512, 512);
    const rows = [pose.R.slice(0, 3), pose.R.slice(3, 6), pose.R.slice(6, 9)];
    for (let i = 0; i < 3; i++) {
      for (let j = 0; j < 3; j++) {
        const dot = rows[i][0] * rows[j][0] + rows[i][1] * rows[j][1]
          + rows[i][2] * rows[j][2];
        expect(dot).toBeCloseTo(i === j ? 1 : 0, 10);
      }
    }
  });

  it('keeps the camera at the orbit distance from the target', () => {
    const p = orbitPosition(orbit);
    const d = Math.hypot(p[0] - 1, p[1] - 2, p[2] - 3);
    expect(d).toBeCloseTo(6, 10);
  });

  it('projects the target to the principal point', () => {
    const pose = orbitToPose(orbit, 512, 384);
    const pc = matmul(pose.R, orbit.target).map((v, i) => v + pose.t[i]);
    expect(pc[2]).toBeCloseTo(6, 10); // target depth = orbit distance
    const u = (pose.fx * pc[0]) / pc[2] + pose.cx;
    const v = (pose.fy * pc[1]) / pc[2] + pose.cy;
    expect(u).toBeCloseTo(256, 8);
    expect(v).toBeCloseTo(192, 8);
  });

  it('camera center maps to the origin of camera space', () => {
    const pose = orbitToPose(orbit, 512, 512);
    const p = orbitPosition(orbit);
    const pc = matmul(pose.R, p).map((v, i) => v + pose.t[i]);
    expect(Math.hypot(...pc)).toBeCloseTo(0, 10);
  });
});

describe('orbit interaction', () => {
  it('clamps the elevation to avoid the poles', () => {
    let o = orbit;
    for (let i = 0; i < 100; i++) o = rotateOrbit(o, 0, 1000);
    expect(o.elevation).toBeLessThan(Math.PI / 2);
    expect(orbitToPose(o, 64, 64).R.every(Number.isFinite)).toBe(true);
  });

  it('zoom multiplies the distance and stays positive', () => {
    const closer = zoomOrbit(orbit, -500);
    const farther = zoomOrbit(orbit, 500);
    expect(closer.distance).toBeLessThan(orbit.distance);
    expect(farther.distance).toBeGreaterThan(orbit.distance);
    let o = orbit;
    for (let i = 0; i < 50; i++) o = zoomOrbit(o, -10000);
    expect(o.distance).toBeGreaterThan(0);
  });
});
