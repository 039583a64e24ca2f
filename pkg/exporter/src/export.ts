/**
 * The export operation: checkpoint in, SFW1 weight file plus fixture
 * activations out, returning a manifest that records what was written.
 */

import { createHash } from 'node:crypto';
import { mkdirSync, writeFileSync } from 'node:fs';
import { dirname, join } from 'node:path';

import { Checkpoint, checkpointIdentifier, checkpointTensor } from './checkpoint.js';
import { serialiseWeightFile, WeightEntry } from './format.js';
import { FIXTURE_SIZE, fixtureImages } from './fixtures.js';
import {
  captureActivations,
  CHANNEL_MEANS,
  CHANNEL_ORDER,
  convTable,
  expectedKernelShape,
  kernelToEngineLayout,
  layerNameMap,
  SourceWeights,
} from './vgg.js';

export const CAPTURE_LAYERS = ['conv1_1', 'conv3_1', 'conv5_1'];

export interface FixtureRecord {
  id: string;
  input: string;
  inputShape: number[];
  inputSha256: string;
  activations: Record<string, { file: string; shape: number[]; sha256: string }>;
}

export interface ExportManifest {
  sourceCheckpoint: string;
  layerNameMap: Record<string, string>;
  channelMeans: number[];
  channelOrder: string;
  pooling: string;
  fixtures: FixtureRecord[];
}

function shapesEqual(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

function sourceWeights(checkpoint: Checkpoint): SourceWeights {
  return {
    kernel: (name) => checkpointTensor(checkpoint, `${name}/kernel`),
    bias: (name) => checkpointTensor(checkpoint, `${name}/bias`),
  };
}

/** Translate the 13 conv layers into canonical SFW1 entries. */
export function buildEntries(checkpoint: Checkpoint): WeightEntry[] {
  const entries: WeightEntry[] = [];
  for (const conv of convTable()) {
    const kernel = checkpointTensor(checkpoint, `${conv.sourceName}/kernel`);
    const expected = expectedKernelShape(conv);
    if (!shapesEqual(kernel.shape, expected)) {
      throw new Error(
        `${conv.sourceName}/kernel has shape [${kernel.shape}], ` +
          `VGG-19 requires [${expected}]`
      );
    }
    const bias = checkpointTensor(checkpoint, `${conv.sourceName}/bias`);
    if (!shapesEqual(bias.shape, [conv.outChannels])) {
      throw new Error(
        `${conv.sourceName}/bias has shape [${bias.shape}], expected [${conv.outChannels}]`
      );
    }
    entries.push({
      name: `${conv.name}.weight`,
      shape: [conv.outChannels, conv.inChannels, 3, 3],
      data: kernelToEngineLayout(kernel.data, kernel.shape),
    });
    entries.push({ name: `${conv.name}.bias`, shape: [conv.outChannels], data: bias.data });
  }
  return entries;
}

function floatFileBytes(data: Float32Array): Buffer {
  const buf = Buffer.alloc(4 * data.length);
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(data[i], 4 * i);
  }
  return buf;
}

function sha256(buf: Buffer): string {
  return createHash('sha256').update(buf).digest('hex');
}

export function exportCheckpoint(
  checkpoint: Checkpoint,
  outWeights: string,
  outFixtures: string
): ExportManifest {
  const entries = buildEntries(checkpoint);
  const fileBytes = serialiseWeightFile({
    channelMeans: CHANNEL_MEANS,
    channelOrder: CHANNEL_ORDER,
    entries,
  });
  mkdirSync(dirname(outWeights), { recursive: true });
  writeFileSync(outWeights, fileBytes);

  const weights = sourceWeights(checkpoint);
  const fixtures: FixtureRecord[] = [];
  mkdirSync(outFixtures, { recursive: true });
  for (const image of fixtureImages()) {
    const imageDir = join(outFixtures, image.id);
    mkdirSync(imageDir, { recursive: true });
    const inputBytes = floatFileBytes(image.data);
    writeFileSync(join(imageDir, 'input.f32'), inputBytes);
    const record: FixtureRecord = {
      id: image.id,
      input: `${image.id}/input.f32`,
      inputShape: [3, FIXTURE_SIZE, FIXTURE_SIZE],
      inputSha256: sha256(inputBytes),
      activations: {},
    };
    const captured = captureActivations(
      weights,
      image.data,
      FIXTURE_SIZE,
      FIXTURE_SIZE,
      CAPTURE_LAYERS
    );
    for (const layer of CAPTURE_LAYERS) {
      const act = captured[layer];
      const bytes = floatFileBytes(act.data);
      const file = `${image.id}/${layer}.f32`;
      writeFileSync(join(outFixtures, file), bytes);
      record.activations[layer] = { file, shape: act.shape, sha256: sha256(bytes) };
    }
    fixtures.push(record);
  }

  const manifest: ExportManifest = {
    sourceCheckpoint: checkpointIdentifier(checkpoint.dir),
    layerNameMap: layerNameMap(),
    channelMeans: [...CHANNEL_MEANS],
    channelOrder: CHANNEL_ORDER,
    pooling: 'max',
    fixtures,
  };
  writeFileSync(
    join(outFixtures, 'index.json'),
    JSON.stringify(
      {
        layout: 'chw',
        dtype: 'float32',
        byteOrder: 'little',
        pooling: 'max',
        imageSize: [FIXTURE_SIZE, FIXTURE_SIZE],
        layers: CAPTURE_LAYERS,
        images: fixtures,
      },
      null,
      2
    )
  );
  return manifest;
}
