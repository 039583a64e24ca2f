/**
 * The three fixed 64x64 test images whose activations ship alongside an
 * exported weight file.  All are procedural so any consumer can verify
 * the stored inputs byte for byte: a flat mid-gray card, smooth ramps,
 * and a hard-edged checkerboard (one image per frequency regime).
 */

export const FIXTURE_SIZE = 64;

export interface FixtureImage {
  id: string;
  /** RGB in [0, 1], flat CHW, float32. */
  data: Float32Array;
}

function gray(): Float32Array {
  return new Float32Array(3 * FIXTURE_SIZE * FIXTURE_SIZE).fill(0.5);
}

function ramp(): Float32Array {
  const n = FIXTURE_SIZE;
  const out = new Float32Array(3 * n * n);
  const plane = n * n;
  for (let y = 0; y < n; y++) {
    for (let x = 0; x < n; x++) {
      out[y * n + x] = x / (n - 1);
      out[plane + y * n + x] = y / (n - 1);
      out[2 * plane + y * n + x] = (x + y) / (2 * (n - 1));
    }
  }
  return out;
}

function checker(): Float32Array {
  const n = FIXTURE_SIZE;
  const tile = 8;
  const out = new Float32Array(3 * n * n);
  const plane = n * n;
  const a = [0.9, 0.2, 0.1];
  const b = [0.1, 0.3, 0.8];
  for (let y = 0; y < n; y++) {
    for (let x = 0; x < n; x++) {
      const color = (Math.floor(y / tile) + Math.floor(x / tile)) % 2 === 0 ? a : b;
      for (let c = 0; c < 3; c++) {
        out[c * plane + y * n + x] = color[c];
      }
    }
  }
  return out;
}

export function fixtureImages(): FixtureImage[] {
  return [
    { id: 'gray', data: gray() },
    { id: 'ramp', data: ramp() },
    { id: 'checker', data: checker() },
  ];
}
