/**
 * Minimal image loading for the dependency-free code path.
 *
 * Binary PPM (P6, RGB) and PGM (P5, grayscale) decode here; any other
 * format is delegated to the neural backend's own loader when one is
 * active, and rejected otherwise.
 */

import { promises as fs } from 'node:fs';

export interface RgbImage {
  width: number;
  height: number;
  /** row-major RGB triples in [0, 1] */
  pixels: Float64Array;
}

export const PORTABLE_EXTENSIONS = ['.ppm', '.pgm'];

export async function readPortableImage(path: string): Promise<RgbImage> {
  const buf = await fs.readFile(path);
  return decodePortableImage(buf, path);
}

export function decodePortableImage(buf: Buffer, name = '<buffer>'): RgbImage {
  const magic = buf.subarray(0, 2).toString('ascii');
  if (magic !== 'P6' && magic !== 'P5') {
    throw new Error(`${name}: unsupported image format (need binary PPM/PGM)`);
  }
  // header: magic, width, height, maxval as whitespace-separated tokens
  // with optional #-comments, then one whitespace byte before the raster
  let pos = 2;
  const tokens: number[] = [];
  while (tokens.length < 3) {
    while (pos < buf.length && isSpace(buf[pos])) pos++;
    if (buf[pos] === 0x23) { // '#'
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < buf.length && !isSpace(buf[pos])) pos++;
    tokens.push(parseInt(buf.subarray(start, pos).toString('ascii'), 10));
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = tokens;
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 65536)) {
    throw new Error(`${name}: malformed header`);
  }
  const channels = magic === 'P6' ? 3 : 1;
  const bytesPer = maxval > 255 ? 2 : 1;
  const need = width * height * channels * bytesPer;
  if (buf.length - pos < need) throw new Error(`${name}: truncated raster`);

  const pixels = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const src = pos + (i * channels + Math.min(c, channels - 1)) * bytesPer;
      const value = bytesPer === 1 ? buf[src] : buf.readUInt16BE(src);
      pixels[i * 3 + c] = value / maxval;
    }
  }
  return { width, height, pixels };
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

export function encodePpm(image: RgbImage): Buffer {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, 'ascii');
  const raster = Buffer.alloc(image.width * image.height * 3);
  for (let i = 0; i < raster.length; i++) {
    raster[i] = Math.max(0, Math.min(255, Math.round(image.pixels[i] * 255)));
  }
  return Buffer.concat([header, raster]);
}

/** Mean RGB + variance per cell of a rows x cols grid. */
export function gridStats(image: RgbImage, rows: number, cols: number): Float64Array[] {
  const cells: Float64Array[] = [];
  for (let gy = 0; gy < rows; gy++) {
    for (let gx = 0; gx < cols; gx++) {
      const x0 = Math.floor((gx * image.width) / cols);
      const x1 = Math.max(x0 + 1, Math.floor(((gx + 1) * image.width) / cols));
      const y0 = Math.floor((gy * image.height) / rows);
      const y1 = Math.max(y0 + 1, Math.floor(((gy + 1) * image.height) / rows));
      const mean = [0, 0, 0];
      const sq = [0, 0, 0];
      let count = 0;
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) {
          for (let c = 0; c < 3; c++) {
            const v = image.pixels[(y * image.width + x) * 3 + c];
            mean[c] += v;
            sq[c] += v * v;
          }
          count++;
        }
      }
      const stats = new Float64Array(6);
      for (let c = 0; c < 3; c++) {
        mean[c] /= count;
        stats[c] = mean[c];
        stats[3 + c] = Math.sqrt(Math.max(0, sq[c] / count - mean[c] * mean[c]));
      }
      cells.push(stats);
    }
  }
  return cells;
}
