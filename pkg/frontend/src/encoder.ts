/**
 * Pluggable embedding backends.
 *
 * `MockClipEncoder` is fully deterministic and offline: image embeddings
 * are seeded random projections of color statistics over a spatial grid,
 * and text embeddings route recognized color words through the same
 * projection so color-named classes align with color-dominated images.
 * It exists so the pipeline, the archive contract, and the zero-shot
 * accuracy bridge are testable without model weights.
 *
 * `TransformersClipEncoder` runs a real CLIP checkpoint through
 * @xenova/transformers (weights download on first use).
 */

import { gridStats, readPortableImage, PORTABLE_EXTENSIONS } from './image.js';
import { fnv1a, gaussianVector, l2Normalize } from './prng.js';

export interface EncodedImage {
  global: Float64Array;
  /** unit rows, one per retained spatial cell / patch token */
  locals: Float64Array[];
}

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  encodeImage(path: string): Promise<EncodedImage>;
  encodeText(prompt: string): Promise<Float64Array>;
}

const COLOR_WORDS: Record<string, [number, number, number]> = {
  red: [1, 0, 0],
  green: [0, 1, 0],
  blue: [0, 0, 1],
  yellow: [1, 1, 0],
  cyan: [0, 1, 1],
  magenta: [1, 0, 1],
  white: [1, 1, 1],
  gray: [0.5, 0.5, 0.5],
  orange: [1, 0.5, 0],
};

const STATS_DIM = 6; // mean RGB + per-channel std

export class MockClipEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;
  readonly gridSize: number;
  private readonly projection: Float64Array; // (dim, STATS_DIM) row-major

  constructor(name = 'mock', dim = 64, gridSize = 7) {
    this.name = name;
    this.dim = dim;
    this.gridSize = gridSize;
    this.projection = gaussianVector(fnv1a(`${name}:projection`), dim * STATS_DIM);
  }

  private project(stats: Float64Array): Float64Array {
    const out = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      let acc = 0;
      for (let j = 0; j < STATS_DIM; j++) {
        acc += this.projection[i * STATS_DIM + j] * stats[j];
      }
      out[i] = acc;
    }
    return out;
  }

  async encodeImage(path: string): Promise<EncodedImage> {
    const image = await readPortableImage(path);
    const cells = gridStats(image, this.gridSize, this.gridSize);
    const locals = cells.map((stats) => l2Normalize(this.project(stats)));
    const mean = new Float64Array(STATS_DIM);
    for (const stats of cells) {
      for (let j = 0; j < STATS_DIM; j++) mean[j] += stats[j] / cells.length;
    }
    return { global: l2Normalize(this.project(mean)), locals };
  }

  async encodeText(prompt: string): Promise<Float64Array> {
    // color words go through the image projection; everything else only
    // contributes a deterministic hash direction for distinctness
    const stats = new Float64Array(STATS_DIM);
    let matched = 0;
    for (const word of prompt.toLowerCase().split(/[^a-z]+/)) {
      const rgb = COLOR_WORDS[word];
      if (rgb) {
        stats[0] += rgb[0];
        stats[1] += rgb[1];
        stats[2] += rgb[2];
        matched++;
      }
    }
    const base = matched > 0
      ? this.project(stats.map((x) => x / matched) as Float64Array)
      : new Float64Array(this.dim);
    const noise = gaussianVector(fnv1a(`${this.name}:text:${prompt}`), this.dim);
    const mix = new Float64Array(this.dim);
    const noiseWeight = matched > 0 ? 0.05 : 1.0;
    for (let i = 0; i < this.dim; i++) mix[i] = base[i] + noiseWeight * noise[i];
    return l2Normalize(mix);
  }
}

export class TransformersClipEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;
  private readonly lib: any;
  private readonly tokenizer: any;
  private readonly textModel: any;
  private readonly processor: any;
  private readonly visionModel: any;
  private readonly maxLocals: number;

  private constructor(name: string, parts: any, dim: number, maxLocals: number) {
    this.name = name;
    this.dim = dim;
    this.lib = parts.lib;
    this.tokenizer = parts.tokenizer;
    this.textModel = parts.textModel;
    this.processor = parts.processor;
    this.visionModel = parts.visionModel;
    this.maxLocals = maxLocals;
  }

  static async load(name: string, maxLocals = 49): Promise<TransformersClipEncoder> {
    let lib: any;
    try {
      // non-literal specifier: the backend is optional and resolved at runtime
      const specifier = '@xenova/transformers';
      lib = await import(specifier);
    } catch {
      throw new Error(
        'model backend unavailable: install @xenova/transformers, or use --model mock',
      );
    }
    const tokenizer = await lib.AutoTokenizer.from_pretrained(name);
    const textModel = await lib.CLIPTextModelWithProjection.from_pretrained(name);
    const processor = await lib.AutoProcessor.from_pretrained(name);
    const visionModel = await lib.CLIPVisionModelWithProjection.from_pretrained(name);
    const probe = await textModel(tokenizer('probe', { padding: true, truncation: true }));
    const dim = probe.text_embeds.dims.at(-1);
    return new TransformersClipEncoder(
      name, { lib, tokenizer, textModel, processor, visionModel }, dim, maxLocals);
  }

  async encodeImage(path: string): Promise<EncodedImage> {
    const image = await this.lib.RawImage.read(path);
    const inputs = await this.processor(image);
    const output = await this.visionModel(inputs);
    const global = l2Normalize(Float64Array.from(output.image_embeds.data as Float32Array));

    // patch tokens, when the export carries them; never fabricated
    const hidden = output.last_hidden_state;
    if (!hidden) {
      throw new Error(
        `model ${this.name} does not expose patch tokens; local features unavailable`,
      );
    }
    const [, tokens, width] = hidden.dims;
    const locals: Float64Array[] = [];
    const keep = Math.min(this.maxLocals, tokens - 1);
    for (let t = 0; t < keep; t++) {
      // skip the class token at index 0; subsample uniformly
      const src = 1 + Math.floor((t * (tokens - 1)) / keep);
      const row = new Float64Array(width);
      for (let j = 0; j < width; j++) row[j] = hidden.data[src * width + j];
      locals.push(l2Normalize(row));
    }
    return { global, locals };
  }

  async encodeText(prompt: string): Promise<Float64Array> {
    const tokens = this.tokenizer(prompt, { padding: true, truncation: true });
    const output = await this.textModel(tokens);
    return l2Normalize(Float64Array.from(output.text_embeds.data as Float32Array));
  }
}

export async function createEncoder(model: string, dim = 64): Promise<Encoder> {
  if (model === 'mock' || model.startsWith('mock:')) {
    return new MockClipEncoder(model, dim);
  }
  return TransformersClipEncoder.load(model);
}

export function supportedByMock(path: string): boolean {
  return PORTABLE_EXTENSIONS.some((ext) => path.toLowerCase().endsWith(ext));
}
