/**
 * Extraction pipeline: image folders in, ATNA archive out.
 *
 * Category embeddings are the normalized mean over the prompt-template
 * ensemble; every image contributes a unit global embedding plus up to
 * `maxLocals` unit local rows (spatially subsampled).  Per-class
 * zero-shot accuracy is computed from the float32-rounded embeddings --
 * exactly the numbers an ATNA consumer will see -- so the reported
 * accuracy is reproducible downstream.  This tool never runs adapter
 * math; it is encoder inference plus serialization.
 */

import { promises as fs } from 'node:fs';
import path from 'node:path';

import { writeArchive } from './atna.js';
import { createEncoder, Encoder } from './encoder.js';
import { DEFAULT_TEMPLATES, fillTemplate } from './templates.js';

export interface ExtractionSpec {
  model: string;
  imageRoot: string;
  classNames: string[];
  templates?: string[];
  out: string;
  maxLocals?: number;
  /** embedding dim for the mock backend; real models define their own */
  dim?: number;
}

export interface ExtractionResult {
  archivePath: string;
  nClasses: number;
  nImages: number;
  skipped: number;
  dim: number;
  nLocals: number;
  perClassAcc: number[];
  overallAcc: number;
}

export async function extract(spec: ExtractionSpec): Promise<ExtractionResult> {
  const templates = spec.templates ?? DEFAULT_TEMPLATES;
  if (templates.length < 1) throw new Error('need at least one prompt template');
  if (spec.classNames.length < 1) throw new Error('need at least one class name');
  const maxLocals = spec.maxLocals ?? 49;

  const encoder = await createEncoder(spec.model, spec.dim ?? 64);
  const d = encoder.dim;

  const category = new Float32Array(spec.classNames.length * d);
  for (let c = 0; c < spec.classNames.length; c++) {
    const mean = new Float64Array(d);
    for (const template of templates) {
      const emb = await encoder.encodeText(fillTemplate(template, spec.classNames[c]));
      for (let j = 0; j < d; j++) mean[j] += emb[j] / templates.length;
    }
    writeUnitRow(category, c * d, mean);
  }

  const globals: Float32Array[] = [];
  const localBlocks: Float32Array[] = [];
  const labels: number[] = [];
  let skipped = 0;
  let nLocals = -1;

  for (let c = 0; c < spec.classNames.length; c++) {
    const dir = path.join(spec.imageRoot, spec.classNames[c]);
    const files = await listImages(dir);
    let encoded = 0;
    for (const file of files) {
      let result;
      try {
        result = await encoder.encodeImage(file);
      } catch (err) {
        skipped++;
        console.warn(`warning: skipping unreadable image ${file}: ${(err as Error).message}`);
        continue;
      }
      const kept = subsampleLocals(result.locals, maxLocals);
      if (nLocals === -1) nLocals = kept.length;
      if (kept.length !== nLocals) {
        throw new Error(`inconsistent local count for ${file}: ${kept.length} != ${nLocals}`);
      }
      const g = new Float32Array(d);
      writeUnitRow(g, 0, result.global);
      globals.push(g);
      const block = new Float32Array(nLocals * d);
      kept.forEach((row, i) => writeUnitRow(block, i * d, row));
      localBlocks.push(block);
      labels.push(c);
      encoded++;
    }
    if (encoded === 0) {
      throw new Error(`no readable images for class '${spec.classNames[c]}' under ${dir}`);
    }
  }

  // zero-shot scoring on the float32-rounded numbers the archive will carry
  const s = labels.length;
  const preds = new Int32Array(s);
  for (let i = 0; i < s; i++) {
    preds[i] = argmaxCosine(globals[i], category, spec.classNames.length, d);
  }
  const perClassAcc = spec.classNames.map((_, c) => {
    let hit = 0;
    let total = 0;
    for (let i = 0; i < s; i++) {
      if (labels[i] === c) {
        total++;
        if (preds[i] === c) hit++;
      }
    }
    return hit / total;
  });
  let overall = 0;
  for (let i = 0; i < s; i++) if (preds[i] === labels[i]) overall++;
  overall /= s;

  const globalFlat = new Float32Array(s * d);
  globals.forEach((g, i) => globalFlat.set(g, i * d));
  const localFlat = new Float32Array(s * nLocals * d);
  localBlocks.forEach((block, i) => localFlat.set(block, i * nLocals * d));

  await writeArchive(spec.out, {
    classNames: spec.classNames,
    categoryEmbeddings: category,
    globalFeatures: globalFlat,
    localFeatures: localFlat,
    labels: Int32Array.from(labels),
    perClassZeroShotAcc: Float64Array.from(perClassAcc),
    d,
    m: nLocals,
  });

  return {
    archivePath: spec.out,
    nClasses: spec.classNames.length,
    nImages: s,
    skipped,
    dim: d,
    nLocals,
    perClassAcc,
    overallAcc: overall,
  };
}

async function listImages(dir: string): Promise<string[]> {
  let entries: string[];
  try {
    entries = await fs.readdir(dir);
  } catch {
    throw new Error(`class directory not found: ${dir}`);
  }
  return entries
    .filter((f) => !f.startsWith('.'))
    .sort()
    .map((f) => path.join(dir, f));
}

function subsampleLocals(locals: Float64Array[], maxLocals: number): Float64Array[] {
  if (locals.length <= maxLocals) return locals;
  const kept: Float64Array[] = [];
  for (let i = 0; i < maxLocals; i++) {
    kept.push(locals[Math.floor((i * locals.length) / maxLocals)]);
  }
  return kept;
}

/** L2-normalize in f64, then store rounded to f32. */
function writeUnitRow(target: Float32Array, offset: number, row: Float64Array): void {
  let norm = 0;
  for (const x of row) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm === 0) throw new Error('zero-norm embedding');
  for (let j = 0; j < row.length; j++) target[offset + j] = Math.fround(row[j] / norm);
}

function argmaxCosine(g: Float32Array, category: Float32Array, n: number, d: number): number {
  let best = -Infinity;
  let bestIdx = 0;
  let gNorm = 0;
  for (let j = 0; j < d; j++) gNorm += g[j] * g[j];
  gNorm = Math.sqrt(gNorm);
  for (let c = 0; c < n; c++) {
    let dot = 0;
    let wNorm = 0;
    for (let j = 0; j < d; j++) {
      dot += category[c * d + j] * g[j];
      wNorm += category[c * d + j] * category[c * d + j];
    }
    const cos = dot / (Math.sqrt(wNorm) * gNorm);
    if (cos > best) {
      best = cos;
      bestIdx = c;
    }
  }
  return bestIdx;
}
