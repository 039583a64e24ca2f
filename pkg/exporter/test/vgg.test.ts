import { describe, expect, it } from 'vitest';

import {
  CHANNEL_MEANS,
  convTable,
  expectedKernelShape,
  kernelToEngineLayout,
  layerNameMap,
  preprocess,
} from '../src/vgg.js';

describe('layer table', () => {
  it('covers the 13 conv layers through conv5_1 in order', () => {
    const names = convTable().map((c) => c.name);
    expect(names).toHaveLength(13);
    expect(names[0]).toBe('conv1_1');
    expect(names[names.length - 1]).toBe('conv5_1');
  });

  it('chains channel counts', () => {
    const table = convTable();
    expect(table[0].inChannels).toBe(3);
    for (let i = 1; i < table.length; i++) {
      expect(table[i].inChannels).toBe(table[i - 1].outChannels);
    }
  });

  it('maps every engine layer to exactly one source layer', () => {
    const map = layerNameMap();
    expect(Object.keys(map)).toHaveLength(13);
    expect(new Set(Object.values(map)).size).toBe(13);
    expect(map['conv1_1']).toBe('block1_conv1');
    expect(map['conv5_1']).toBe('block5_conv1');
  });

  it('expects the published conv1_1 kernel shape', () => {
    expect(expectedKernelShape(convTable()[0])).toEqual([3, 3, 3, 64]);
  });
});

describe('kernel layout', () => {
  it('transposes [kh, kw, in, out] to [out, in, kh, kw]', () => {
    const [kh, kw, cin, cout] = [3, 3, 2, 4];
    const kernel = new Float32Array(kh * kw * cin * cout).map((_, i) => i);
    const engine = kernelToEngineLayout(kernel, [kh, kw, cin, cout]);
    for (let o = 0; o < cout; o++) {
      for (let i = 0; i < cin; i++) {
        for (let y = 0; y < kh; y++) {
          for (let x = 0; x < kw; x++) {
            const src = kernel[((y * kw + x) * cin + i) * cout + o];
            const dst = engine[((o * cin + i) * kh + y) * kw + x];
            expect(dst).toBe(src);
          }
        }
      }
    }
  });
});

describe('preprocessing', () => {
  it('scales, flips to BGR and centres', () => {
    const chw = new Float32Array(3 * 4);
    chw.fill(1.0, 0, 4); // red plane
    const hwc = preprocess(chw, 2, 2);
    // Pixel 0: B = 0*255 - mean_b, G = 0*255 - mean_g, R = 255 - mean_r.
    expect(hwc[0]).toBeCloseTo(-CHANNEL_MEANS[0], 4);
    expect(hwc[1]).toBeCloseTo(-CHANNEL_MEANS[1], 4);
    expect(hwc[2]).toBeCloseTo(255 - CHANNEL_MEANS[2], 3);
  });

  it('rejects a size mismatch', () => {
    expect(() => preprocess(new Float32Array(5), 2, 2)).toThrow(/expected 3x2x2/);
  });
});
