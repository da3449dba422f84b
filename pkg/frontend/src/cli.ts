#!/usr/bin/env node
/**
 * clip-atna-extract extract --model <name> --images <root> --classes a,b,c
 *                           [--templates "t1|t2"] [--max-locals 49]
 *                           [--dim 64] --out archive.atna
 *
 * `--model mock` runs the deterministic offline backend (binary PPM/PGM
 * images); any other name loads a CLIP checkpoint via
 * @xenova/transformers.  Templates use `{}` as the class placeholder and
 * default to the seven-template ensemble.
 */

import { extract } from './extract.js';
import { DEFAULT_TEMPLATES } from './templates.js';

function parseArgs(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith('--')) throw new Error(`unexpected argument: ${argv[i]}`);
    const key = argv[i].slice(2);
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`flag --${key} needs a value`);
    flags.set(key, value);
    i++;
  }
  return flags;
}

function required(flags: Map<string, string>, key: string): string {
  const value = flags.get(key);
  if (!value) throw new Error(`missing required flag --${key}`);
  return value;
}

export async function main(argv: string[]): Promise<number> {
  if (argv[0] !== 'extract') {
    console.error('usage: clip-atna-extract extract --model M --images DIR '
      + '--classes a,b,c --out FILE [--templates "t1|t2"] [--max-locals N] [--dim D]');
    return 2;
  }
  try {
    const flags = parseArgs(argv.slice(1));
    const templates = flags.has('templates')
      ? flags.get('templates')!.split('|').map((t) => t.trim()).filter(Boolean)
      : DEFAULT_TEMPLATES;
    const result = await extract({
      model: required(flags, 'model'),
      imageRoot: required(flags, 'images'),
      classNames: required(flags, 'classes').split(',').map((c) => c.trim()).filter(Boolean),
      templates,
      out: required(flags, 'out'),
      maxLocals: flags.has('max-locals') ? parseInt(flags.get('max-locals')!, 10) : undefined,
      dim: flags.has('dim') ? parseInt(flags.get('dim')!, 10) : undefined,
    });
    console.log(`wrote ${result.archivePath}: ${result.nClasses} classes, `
      + `${result.nImages} images (${result.skipped} skipped), `
      + `d=${result.dim}, m=${result.nLocals}`);
    console.log(`zero-shot accuracy ${result.overallAcc.toFixed(4)} `
      + `(per class: ${result.perClassAcc.map((a) => a.toFixed(3)).join(', ')})`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

import { pathToFileURL } from 'node:url';

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
