/**
 * VGG-19 layer table, checkpoint name mapping and the reference forward
 * pass used to capture fixture activations.
 *
 * The transfer engine only reads features up to conv5_1, so the export
 * stops there: 13 conv layers, max pooling after blocks 1-4.  Source
 * checkpoints store kernels as [kh, kw, in, out] (the Keras layout);
 * the engine wants [out, in, kh, kw].
 */

import * as tf from '@tensorflow/tfjs';

/** Engine layer name -> output channels, in network order. */
export const CONV_PLAN: Array<[string, number]> = [
  ['conv1_1', 64],
  ['conv1_2', 64],
  ['conv2_1', 128],
  ['conv2_2', 128],
  ['conv3_1', 256],
  ['conv3_2', 256],
  ['conv3_3', 256],
  ['conv3_4', 256],
  ['conv4_1', 512],
  ['conv4_2', 512],
  ['conv4_3', 512],
  ['conv4_4', 512],
  ['conv5_1', 512],
];

/** Blocks 1-4 end with a 2x2 max pool; block 5 stops at conv5_1. */
export const POOL_AFTER = new Set(['conv1_2', 'conv2_2', 'conv3_4', 'conv4_4']);

/**
 * Per-channel means of the training data, in BGR order, on the 0-255
 * scale.  Written to the SFW1 header so the engine reproduces the same
 * preprocessing the checkpoint was trained with.
 */
export const CHANNEL_MEANS: [number, number, number] = [103.939, 116.779, 123.68];
export const CHANNEL_ORDER = 'bgr';

export interface ConvShape {
  name: string;
  sourceName: string;
  inChannels: number;
  outChannels: number;
}

/** The 13 conv layers with their source-checkpoint names and channel counts. */
export function convTable(): ConvShape[] {
  const table: ConvShape[] = [];
  let prev = 3;
  for (const [name, out] of CONV_PLAN) {
    const block = name[4];
    const index = name[6];
    table.push({
      name,
      sourceName: `block${block}_conv${index}`,
      inChannels: prev,
      outChannels: out,
    });
    prev = out;
  }
  return table;
}

/** Engine name -> source name for every exported layer (a bijection). */
export function layerNameMap(): Record<string, string> {
  const map: Record<string, string> = {};
  for (const conv of table13()) {
    map[conv.name] = conv.sourceName;
  }
  return map;
}

const TABLE = convTable();

function table13(): ConvShape[] {
  return TABLE;
}

export function expectedKernelShape(conv: ConvShape): number[] {
  return [3, 3, conv.inChannels, conv.outChannels];
}

/** [kh, kw, in, out] -> [out, in, kh, kw], both row-major. */
export function kernelToEngineLayout(kernel: Float32Array, shape: number[]): Float32Array {
  const [kh, kw, cin, cout] = shape;
  const out = new Float32Array(kernel.length);
  for (let y = 0; y < kh; y++) {
    for (let x = 0; x < kw; x++) {
      for (let i = 0; i < cin; i++) {
        for (let o = 0; o < cout; o++) {
          const src = ((y * kw + x) * cin + i) * cout + o;
          const dst = ((o * cin + i) * kh + y) * kw + x;
          out[dst] = kernel[src];
        }
      }
    }
  }
  return out;
}

/**
 * RGB image in [0, 1], flat CHW -> network input: scale to 0-255, flip
 * to BGR, subtract the channel means.  Returned flat HWC for tfjs.
 */
export function preprocess(chw: Float32Array, height: number, width: number): Float32Array {
  const plane = height * width;
  if (chw.length !== 3 * plane) {
    throw new Error(`image has ${chw.length} values, expected 3x${height}x${width}`);
  }
  const hwc = new Float32Array(chw.length);
  for (let p = 0; p < plane; p++) {
    for (let c = 0; c < 3; c++) {
      // BGR channel c comes from RGB channel 2 - c.
      hwc[p * 3 + c] = chw[(2 - c) * plane + p] * 255 - CHANNEL_MEANS[c];
    }
  }
  return hwc;
}

export interface SourceWeights {
  /** Source layer name -> kernel/bias tensors in checkpoint layout. */
  kernel(sourceName: string): { shape: number[]; data: Float32Array };
  bias(sourceName: string): { shape: number[]; data: Float32Array };
}

/**
 * Run the source network on one image and capture the conv responses
 * (pre-rectifier) at the requested layers.  Returns flat CHW arrays.
 */
export function captureActivations(
  weights: SourceWeights,
  imageChw: Float32Array,
  height: number,
  width: number,
  captureLayers: string[]
): Record<string, { shape: number[]; data: Float32Array }> {
  const wanted = new Set(captureLayers);
  for (const name of wanted) {
    if (!TABLE.some((conv) => conv.name === name)) {
      throw new Error(`no conv layer named ${name}`);
    }
  }
  const captured: Record<string, { shape: number[]; data: Float32Array }> = {};
  tf.tidy(() => {
    let x = tf.tensor4d(preprocess(imageChw, height, width), [1, height, width, 3]);
    for (const conv of TABLE) {
      const kernel = weights.kernel(conv.sourceName);
      const bias = weights.bias(conv.sourceName);
      const kernelT = tf.tensor4d(kernel.data, kernel.shape as [number, number, number, number]);
      const biasT = tf.tensor1d(bias.data);
      x = tf.add(tf.conv2d(x as tf.Tensor4D, kernelT as tf.Tensor4D, 1, 'same'), biasT);
      if (wanted.has(conv.name)) {
        const [, h, w, c] = x.shape as number[];
        const hwcData = x.dataSync() as Float32Array;
        captured[conv.name] = { shape: [c, h, w], data: hwcToChw(hwcData, h, w, c) };
      }
      x = tf.relu(x);
      if (POOL_AFTER.has(conv.name)) {
        x = tf.maxPool(x as tf.Tensor4D, 2, 2, 'valid');
      }
    }
  });
  return captured;
}

function hwcToChw(hwc: Float32Array, h: number, w: number, c: number): Float32Array {
  const chw = new Float32Array(hwc.length);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      for (let ch = 0; ch < c; ch++) {
        chw[ch * h * w + y * w + x] = hwc[(y * w + x) * c + ch];
      }
    }
  }
  return chw;
}
