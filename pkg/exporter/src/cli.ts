#!/usr/bin/env node
/**
 * Exporter CLI.
 *
 *   pis3r-export export-model  --images a.png b.png --backend-cmd "<cmd>"
 *                              [--device cpu] [--min-confidence X] --out DIR
 *   pis3r-export export-colmap --model DIR [--images DIR] --out DIR
 *
 * Outputs are the engine's PMAP + cameras.json formats; nothing is
 * emitted unless the convention audit passes.
 */

import { exportFromColmap } from './colmap.js';
import { exportFromModel } from './model.js';

interface Parsed {
  command: string;
  flags: Map<string, string[]>;
}

function parseArgv(argv: string[]): Parsed {
  if (argv.length === 0 || argv[0].startsWith('--')) {
    throw new Error('usage: pis3r-export <export-model|export-colmap> [flags]');
  }
  const flags = new Map<string, string[]>();
  let current: string | null = null;
  for (const arg of argv.slice(1)) {
    if (arg.startsWith('--')) {
      current = arg.slice(2);
      if (!flags.has(current)) {
        flags.set(current, []);
      }
    } else if (current !== null) {
      flags.get(current)!.push(arg);
    } else {
      throw new Error(`unexpected positional argument ${arg}`);
    }
  }
  return { command: argv[0], flags };
}

function single(flags: Map<string, string[]>, name: string, required = true): string | null {
  const vals = flags.get(name);
  if (!vals || vals.length === 0) {
    if (required) {
      throw new Error(`missing required flag --${name}`);
    }
    return null;
  }
  return vals[vals.length - 1];
}

export function main(argv: string[]): number {
  let parsed: Parsed;
  try {
    parsed = parseArgv(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  try {
    if (parsed.command === 'export-model') {
      const images = parsed.flags.get('images') ?? [];
      const out = single(parsed.flags, 'out')!;
      const backend = single(parsed.flags, 'backend-cmd')!;
      const device = single(parsed.flags, 'device', false) ?? 'cpu';
      const minConfRaw = single(parsed.flags, 'min-confidence', false);
      const result = exportFromModel(images, out, {
        backendCommand: backend,
        device,
        minConfidence: minConfRaw === null ? null : Number(minConfRaw),
      });
      for (const [i, audit] of result.audits.entries()) {
        console.log(
          `view ${i}: audit ${(100 * audit.fraction).toFixed(1)}% of ${audit.valid} points within tolerance`,
        );
      }
      console.log(result.files.join('\n'));
      return 0;
    }
    if (parsed.command === 'export-colmap') {
      const model = single(parsed.flags, 'model')!;
      const images = single(parsed.flags, 'images', false);
      const out = single(parsed.flags, 'out')!;
      const result = exportFromColmap(model, images, out);
      console.log(result.files.join('\n'));
      return 0;
    }
    console.error(`error: unknown command ${parsed.command}`);
    return 2;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
