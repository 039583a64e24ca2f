/**
 * Command line for the weight exporter.
 *
 * Usage:
 *   node dist/cli.js generate --out <dir> [--seed N]
 *       Write a seeded stand-in VGG-19 checkpoint in the tfjs-layers
 *       artifact layout (model.json + weight shards).
 *
 *   node dist/cli.js export --checkpoint <dir> --weights <file.sfw1>
 *                           --fixtures <dir> [--manifest <file.json>]
 *       Convert a checkpoint to an SFW1 weight file and capture the
 *       reference activations for the three fixture images.
 */

import { writeFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { parseArgs } from 'node:util';

import { generateCheckpoint, readCheckpoint } from './checkpoint.js';
import { exportCheckpoint } from './export.js';

function fail(message: string): never {
  console.error(`error: ${message}`);
  process.exit(1);
}

function runGenerate(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      out: { type: 'string' },
      seed: { type: 'string', default: '1' },
    },
  });
  if (!values.out) {
    fail('generate needs --out <dir>');
  }
  const seed = Number(values.seed);
  if (!Number.isInteger(seed) || seed < 0) {
    fail(`--seed must be a non-negative integer, got ${values.seed}`);
  }
  generateCheckpoint(values.out, seed);
  console.log(`wrote checkpoint (seed ${seed}) to ${values.out}`);
}

function runExport(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      checkpoint: { type: 'string' },
      weights: { type: 'string' },
      fixtures: { type: 'string' },
      manifest: { type: 'string' },
    },
  });
  if (!values.checkpoint || !values.weights || !values.fixtures) {
    fail('export needs --checkpoint <dir>, --weights <file> and --fixtures <dir>');
  }
  const checkpoint = readCheckpoint(values.checkpoint);
  const manifest = exportCheckpoint(checkpoint, values.weights, values.fixtures);
  const manifestPath = values.manifest ?? join(dirname(values.weights), 'manifest.json');
  writeFileSync(manifestPath, JSON.stringify(manifest, null, 2));
  console.log(`wrote ${values.weights}`);
  console.log(`wrote fixtures for ${manifest.fixtures.length} images to ${values.fixtures}`);
  console.log(`wrote ${manifestPath}`);
}

function main(): void {
  const [command, ...rest] = process.argv.slice(2);
  switch (command) {
    case 'generate':
      runGenerate(rest);
      break;
    case 'export':
      runExport(rest);
      break;
    default:
      fail(`unknown command ${JSON.stringify(command ?? '')}; expected generate or export`);
  }
}

main();
