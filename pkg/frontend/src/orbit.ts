/** Orbit parameters -> pinhole camera pose, matching the server camera
 * convention: R rows are [right, down, forward] (world-to-camera,
 * row-major) and t = -R * position. */

import type { CameraPose } from './types.js';
import type { OrbitParams } from './state.js';

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(a: Vec3): Vec3 {
  const n = Math.hypot(a[0], a[1], a[2]);
  return [a[0] / n, a[1] / n, a[2] / n];
}

export function orbitPosition(orbit: OrbitParams): Vec3 {
  const { target, distance, azimuth, elevation } = orbit;
  const horizontal = Math.cos(elevation) * distance;
  return [
    target[0] + horizontal * Math.sin(azimuth),
    target[1] + distance * Math.sin(elevation),
    target[2] + horizontal * Math.cos(azimuth),
  ];
}

export function orbitToPose(
  orbit: OrbitParams,
  width: number,
  height: number,
  fovDeg = 50,
): CameraPose {
  const position = orbitPosition(orbit);
  const forward = normalize(sub(orbit.target, position));
  let up: Vec3 = [0, 1, 0];
  if (Math.abs(forward[1]) > 0.999) {
    up = [1, 0, 0]; // looking straight up/down: pick another vertical
  }
  const right = normalize(cross(forward, up));
  const down = cross(forward, right);
  const focal = 0.5 * width / Math.tan((fovDeg * Math.PI) / 360);
  const R = [...right, ...down, ...forward];
  const t = [
    -(R[0] * position[0] + R[1] * position[1] + R[2] * position[2]),
    -(R[3] * position[0] + R[4] * position[1] + R[5] * position[2]),
    -(R[6] * position[0] + R[7] * position[1] + R[8] * position[2]),
  ];
  return {
    fx: focal,
    fy: focal,
    cx: width / 2,
    cy: height / 2,
    width,
    height,
    R,
    t,
  };
}

/** Apply a drag delta to the orbit angles, clamping elevation. */
export function rotateOrbit(
  orbit: OrbitParams,
  dxPixels: number,
  dyPixels: number,
  sensitivity = 0.008,
): OrbitParams {
  const maxElevation = Math.PI / 2 - 0.05;
  return {
    ...orbit,
    azimuth: orbit.azimuth - dxPixels * sensitivity,
    elevation: Math.min(
      maxElevation,
      Math.max(-maxElevation, orbit.elevation + dyPixels * sensitivity),
    ),
  };
}

export function zoomOrbit(orbit: OrbitParams, wheelDelta: number): OrbitParams {
  const factor = Math.exp(wheelDelta * 0.001);
  return { ...orbit, distance: Math.max(0.1, orbit.distance * factor) };
}
