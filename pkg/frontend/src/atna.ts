/**
 * ATNA v1 container: the wire format consumed by the adapter toolkit.
 *
 * Layout (little-endian): 4-byte magic "ATNA", u32 version (1), u64 JSON
 * header length, UTF-8 JSON header, then raw float32 payloads
 * concatenated in the order declared by the header's `fields` list.
 */

import { promises as fs } from 'node:fs';
import { rename, writeFile } from 'node:fs/promises';

const MAGIC = Buffer.from('ATNA', 'ascii');
export const FORMAT_VERSION = 1;

export interface AtnaField {
  name: string;
  shape: number[];
}

export interface ArchiveData {
  classNames: string[];
  /** (N, D) unit rows */
  categoryEmbeddings: Float32Array;
  /** (S, D) unit rows */
  globalFeatures: Float32Array;
  /** (S, M, D) */
  localFeatures: Float32Array;
  /** (S,) class indices */
  labels: Int32Array;
  /** (N,) in [0, 1] */
  perClassZeroShotAcc: Float64Array;
  d: number;
  m: number;
}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export async function writeArchive(path: string, data: ArchiveData): Promise<void> {
  const n = data.classNames.length;
  const s = data.labels.length;
  const { d, m } = data;
  if (data.categoryEmbeddings.length !== n * d) throw new Error('category payload size mismatch');
  if (data.globalFeatures.length !== s * d) throw new Error('global payload size mismatch');
  if (data.localFeatures.length !== s * m * d) throw new Error('local payload size mismatch');
  if (data.perClassZeroShotAcc.length !== n) throw new Error('accuracy payload size mismatch');

  const fields: AtnaField[] = [
    { name: 'category_embeddings', shape: [n, d] },
    { name: 'global_features', shape: [s, d] },
    { name: 'local_features', shape: [s, m, d] },
    { name: 'labels', shape: [s] },
    { name: 'per_class_zero_shot_acc', shape: [n] },
  ];
  const header = {
    class_names: data.classNames,
    d,
    fields,
    kind: 'archive',
    m,
    n_classes: n,
    n_samples: s,
  };
  const blob = Buffer.from(JSON.stringify(header), 'utf-8');

  const prefix = Buffer.alloc(16);
  MAGIC.copy(prefix, 0);
  prefix.writeUInt32LE(FORMAT_VERSION, 4);
  prefix.writeBigUInt64LE(BigInt(blob.length), 8);

  const payloads = [
    f32Bytes(data.categoryEmbeddings),
    f32Bytes(data.globalFeatures),
    f32Bytes(data.localFeatures),
    f32Bytes(Float32Array.from(data.labels)),
    f32Bytes(Float32Array.from(data.perClassZeroShotAcc)),
  ];

  const tmp = `${path}.tmp.${process.pid}`;
  await writeFile(tmp, Buffer.concat([prefix, blob, ...payloads]));
  await rename(tmp, path);
}

function f32Bytes(arr: Float32Array): Buffer {
  // serialize explicitly little-endian regardless of host order
  const buf = Buffer.alloc(arr.length * 4);
  for (let i = 0; i < arr.length; i++) buf.writeFloatLE(arr[i], i * 4);
  return buf;
}

export interface ParsedArchive {
  header: Record<string, unknown> & { fields: AtnaField[] };
  payloads: Map<string, { shape: number[]; data: Float32Array }>;
}

/** Reader used by the tests to verify what was written. */
export async function readArchive(path: string): Promise<ParsedArchive> {
  const buf = await fs.readFile(path);
  if (buf.length < 16) throw new Error('truncated file');
  if (!buf.subarray(0, 4).equals(MAGIC)) throw new Error('bad magic');
  const version = buf.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  const headerLen = Number(buf.readBigUInt64LE(8));
  const header = JSON.parse(buf.subarray(16, 16 + headerLen).toString('utf-8'));

  const payloads = new Map<string, { shape: number[]; data: Float32Array }>();
  let offset = 16 + headerLen;
  for (const field of header.fields as AtnaField[]) {
    const count = numel(field.shape);
    if (offset + 4 * count > buf.length) throw new Error(`truncated payload ${field.name}`);
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) data[i] = buf.readFloatLE(offset + i * 4);
    payloads.set(field.name, { shape: field.shape, data });
    offset += 4 * count;
  }
  if (offset !== buf.length) throw new Error('trailing bytes');
  return { header, payloads };
}
