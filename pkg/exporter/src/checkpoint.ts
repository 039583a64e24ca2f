/**
 * Reading and writing checkpoints in the tfjs-layers artifact layout:
 * a model.json whose weightsManifest lists named float32 tensors stored
 * across binary shard files.
 *
 * Real published VGG-19 artifacts load through the same path; generate()
 * exists for environments where the published file cannot be fetched and
 * produces a seeded stand-in with the exact architecture and layout.
 */

import { createHash } from 'node:crypto';
import { mkdirSync, readFileSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

import { ConvShape, convTable, expectedKernelShape } from './vgg.js';

const SHARD_BYTES = 4 * 1024 * 1024;

interface ManifestWeight {
  name: string;
  shape: number[];
  dtype: string;
}

interface ManifestGroup {
  paths: string[];
  weights: ManifestWeight[];
}

export interface Checkpoint {
  dir: string;
  tensors: Map<string, { shape: number[]; data: Float32Array }>;
}

export function readCheckpoint(dir: string): Checkpoint {
  const modelPath = join(dir, 'model.json');
  const model = JSON.parse(readFileSync(modelPath, 'utf-8'));
  const groups: ManifestGroup[] = model.weightsManifest;
  if (!Array.isArray(groups)) {
    throw new Error(`${modelPath} has no weightsManifest`);
  }
  const tensors = new Map<string, { shape: number[]; data: Float32Array }>();
  for (const group of groups) {
    const shards = group.paths.map((p) => readFileSync(join(dir, p)));
    const blob = Buffer.concat(shards);
    let offset = 0;
    for (const weight of group.weights) {
      if (weight.dtype !== 'float32') {
        throw new Error(`tensor ${weight.name} has dtype ${weight.dtype}, only float32 is supported`);
      }
      const count = weight.shape.reduce((a, b) => a * b, 1);
      const nBytes = 4 * count;
      if (offset + nBytes > blob.length) {
        throw new Error(`shard data ends inside tensor ${weight.name}`);
      }
      const data = new Float32Array(count);
      for (let i = 0; i < count; i++) {
        data[i] = blob.readFloatLE(offset + 4 * i);
      }
      offset += nBytes;
      tensors.set(weight.name, { shape: weight.shape, data });
    }
    if (offset !== blob.length) {
      throw new Error(`${blob.length - offset} unused bytes after group tensors`);
    }
  }
  return { dir, tensors };
}

export function checkpointTensor(
  checkpoint: Checkpoint,
  name: string
): { shape: number[]; data: Float32Array } {
  const tensor = checkpoint.tensors.get(name);
  if (tensor === undefined) {
    throw new Error(`checkpoint has no tensor named ${name}`);
  }
  return tensor;
}

/** Identifier for manifests: the checkpoint's declared name plus a content hash. */
export function checkpointIdentifier(dir: string): string {
  const model = JSON.parse(readFileSync(join(dir, 'model.json'), 'utf-8'));
  const digest = createHash('sha256')
    .update(readFileSync(join(dir, 'model.json')))
    .digest('hex')
    .slice(0, 16);
  const label = model.generatedBy ?? 'unknown';
  return `${label} (model.json sha256:${digest})`;
}

// -- synthetic checkpoint ---------------------------------------------

/** Deterministic 32-bit PRNG (mulberry32). */
function makeRandom(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussianPair(random: () => number): [number, number] {
  let u = 0;
  while (u === 0) {
    u = random();
  }
  const r = Math.sqrt(-2 * Math.log(u));
  const theta = 2 * Math.PI * random();
  return [r * Math.cos(theta), r * Math.sin(theta)];
}

function fillGaussian(out: Float32Array, std: number, random: () => number): void {
  for (let i = 0; i < out.length; i += 2) {
    const [a, b] = gaussianPair(random);
    out[i] = a * std;
    if (i + 1 < out.length) {
      out[i + 1] = b * std;
    }
  }
}

/**
 * Write a seeded stand-in VGG-19 checkpoint (conv layers only, through
 * conv5_1) in the tfjs-layers artifact layout.  Kernels are scaled by
 * sqrt(2 / fan-in) so activation magnitudes stay stable through the
 * rectified stack; biases are small gaussians.
 */
export function generateCheckpoint(dir: string, seed: number): void {
  const random = makeRandom(seed);
  const weights: ManifestWeight[] = [];
  const buffers: Buffer[] = [];
  for (const conv of convTable()) {
    const kernelShape = expectedKernelShape(conv);
    const kernel = new Float32Array(kernelShape.reduce((a, b) => a * b, 1));
    fillGaussian(kernel, Math.sqrt(2 / (9 * conv.inChannels)), random);
    const bias = new Float32Array(conv.outChannels);
    fillGaussian(bias, 0.05, random);
    weights.push({ name: `${conv.sourceName}/kernel`, shape: kernelShape, dtype: 'float32' });
    buffers.push(floatBuffer(kernel));
    weights.push({ name: `${conv.sourceName}/bias`, shape: [conv.outChannels], dtype: 'float32' });
    buffers.push(floatBuffer(bias));
  }
  const blob = Buffer.concat(buffers);
  const nShards = Math.max(1, Math.ceil(blob.length / SHARD_BYTES));
  const paths: string[] = [];
  mkdirSync(dir, { recursive: true });
  for (let i = 0; i < nShards; i++) {
    const path = `group1-shard${i + 1}of${nShards}.bin`;
    paths.push(path);
    writeFileSync(join(dir, path), blob.subarray(i * SHARD_BYTES, (i + 1) * SHARD_BYTES));
  }
  const model = {
    format: 'layers-model',
    generatedBy: `synthetic-vgg19 seed=${seed}`,
    convertedBy: null,
    weightsManifest: [{ paths, weights }],
  };
  writeFileSync(join(dir, 'model.json'), JSON.stringify(model, null, 2));
}

function floatBuffer(values: Float32Array): Buffer {
  const buf = Buffer.alloc(4 * values.length);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], 4 * i);
  }
  return buf;
}

export type { ConvShape };
