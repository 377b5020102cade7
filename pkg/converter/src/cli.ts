#!/usr/bin/env node
/**
 * reprime-convert: export a framework checkpoint (safetensors) into the
 * reprime tensor-archive format.
 *
 * Usage:
 *   reprime-convert --in model.safetensors --map rename.json --out model.rpa
 *                   [--manifest model.manifest.json] [--strict | --no-strict]
 *                   [--expect-blocks 16,32,64,128]
 *
 * Exit codes: 0 success, 1 runtime failure, 2 bad input.
 */

import { existsSync } from 'node:fs';
import { resolve } from 'node:path';
import { fileURLToPath } from 'node:url';

import { convert } from './convert.js';
import { NameMapError, loadNameMap } from './namemap.js';
import { SafetensorsError } from './safetensors.js';
import { ArchiveWriteError } from './archive.js';

interface Args {
  in?: string;
  out?: string;
  map?: string;
  manifest?: string;
  strict?: boolean;
  expectBlocks?: number[];
  help?: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {};
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case '--in':
      case '-i':
        args.in = argv[++i];
        break;
      case '--out':
      case '-o':
        args.out = argv[++i];
        break;
      case '--map':
      case '-m':
        args.map = argv[++i];
        break;
      case '--manifest':
        args.manifest = argv[++i];
        break;
      case '--strict':
        args.strict = true;
        break;
      case '--no-strict':
        args.strict = false;
        break;
      case '--expect-blocks':
        args.expectBlocks = argv[++i].split(',').map((s) => parseInt(s, 10));
        break;
      case '--help':
      case '-h':
        args.help = true;
        break;
      default:
        throw new Error(`unknown argument: ${argv[i]}`);
    }
  }
  return args;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return 2;
  }
  if (args.help) {
    console.log(
      'usage: reprime-convert --in <src.safetensors> --map <map.json> --out <dst.rpa>' +
        ' [--manifest <path>] [--strict|--no-strict] [--expect-blocks 16,32,64,128]',
    );
    return 0;
  }
  if (!args.in || !args.out || !args.map) {
    console.error('error: --in, --map and --out are required (see --help)');
    return 2;
  }
  if (!existsSync(args.in)) {
    console.error(`error: input not found: ${args.in}`);
    return 2;
  }
  try {
    const map = loadNameMap(args.map);
    if (args.strict !== undefined) map.strict = args.strict;
    const manifest = convert({
      sourcePath: args.in,
      outPath: args.out,
      map,
      manifestPath: args.manifest ?? `${args.out}.manifest.json`,
      expectBlocks: args.expectBlocks,
    });
    console.log(
      `wrote ${args.out}: ${manifest.tensors.length} tensors` +
        (manifest.skipped.length ? `, skipped ${manifest.skipped.length}` : ''),
    );
    return 0;
  } catch (e) {
    const msg = (e as Error).message;
    if (
      e instanceof NameMapError ||
      e instanceof SafetensorsError ||
      e instanceof ArchiveWriteError
    ) {
      console.error(`error: ${msg}`);
      return 2;
    }
    console.error(`error: ${msg}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  fileURLToPath(import.meta.url) === resolve(process.argv[1]);
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
