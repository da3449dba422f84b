/**
 * Cross-language boundary contract: an archive produced here must load in
 * the Python toolkit, and the zero-shot accuracy both sides compute from
 * the shared float32 payload must agree.
 */

import { spawnSync } from 'node:child_process';
import { mkdtemp, readFile, rm } from 'node:fs/promises';
import { tmpdir } from 'node:os';
import path from 'node:path';

import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { extract } from '../src/extract.js';
import { buildDataset } from './extract.test.js';

function pythonToolkit(): string | null {
  for (const python of ['python3', 'python']) {
    const probe = spawnSync(python, ['-c', 'import attn_adapter'], { encoding: 'utf-8' });
    if (probe.status === 0) return python;
  }
  return null;
}

const python = pythonToolkit();
let root: string;

beforeAll(async () => {
  root = await mkdtemp(path.join(tmpdir(), 'boundary-'));
  await buildDataset(path.join(root, 'images'), 6);
});

afterAll(async () => {
  await rm(root, { recursive: true, force: true });
});

describe.skipIf(!python)('python toolkit boundary', () => {
  it('archive loads downstream and zero-shot accuracies agree', async () => {
    const out = path.join(root, 'bridge.atna');
    const result = await extract({
      model: 'mock',
      imageRoot: path.join(root, 'images'),
      classNames: ['red', 'green', 'blue'],
      out,
      dim: 48,
      maxLocals: 9,
    });

    // k=0 scores every sample, the same set the extractor reports on
    const report = path.join(root, 'metrics.json');
    const proc = spawnSync(python!, [
      '-m', 'attn_adapter.cli', 'eval',
      '--data', out, '--method', 'zeroshot', '--k', '0',
      '--report', report,
    ], { encoding: 'utf-8' });
    expect(proc.status, proc.stderr).toBe(0);

    const metrics = JSON.parse(await readFile(report, 'utf-8'));
    expect(Math.abs(metrics.accuracy - result.overallAcc)).toBeLessThan(1e-4);
    expect(metrics.per_class_acc).toHaveLength(3);
    metrics.per_class_acc.forEach((acc: number, i: number) => {
      expect(Math.abs(acc - result.perClassAcc[i])).toBeLessThan(1e-4);
    });
  });

  it('adapters can train on an extracted archive', async () => {
    const out = path.join(root, 'train.atna');
    await extract({
      model: 'mock',
      imageRoot: path.join(root, 'images'),
      classNames: ['red', 'green', 'blue'],
      out,
      dim: 48,
      maxLocals: 9,
    });
    const ck = path.join(root, 'ck.atna');
    const proc = spawnSync(python!, [
      '-m', 'attn_adapter.cli', 'train',
      '--data', out, '--out', ck, '--epochs', '2', '--k', '2',
    ], { encoding: 'utf-8' });
    expect(proc.status, proc.stderr).toBe(0);

    const evalProc = spawnSync(python!, [
      '-m', 'attn_adapter.cli', 'eval',
      '--data', out, '--checkpoint', ck, '--method', 'attn', '--k', '2',
    ], { encoding: 'utf-8' });
    expect(evalProc.status, evalProc.stderr).toBe(0);
    expect(evalProc.stdout).toContain('accuracy=');
  });
});
