import { spawn } from 'node:child_process';
import { mkdtempSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

/** Spawn a short-lived python process and collect its output. */
export function runPython(code: string): Promise<{ stdout: string; status: number }> {
  return new Promise((resolve, reject) => {
    const child = spawn('python3', ['-c', code], { stdio: ['ignore', 'pipe', 'pipe'] });
    let stdout = '';
    let stderr = '';
    child.stdout.on('data', (chunk) => (stdout += chunk));
    child.stderr.on('data', (chunk) => (stderr += chunk));
    child.on('error', reject);
    child.on('close', (status) => {
      if (status !== 0) reject(new Error(`python exited ${status}: ${stderr}`));
      else resolve({ stdout, status: status ?? 0 });
    });
  });
}

export function runCli(args: string[]): Promise<{ stdout: string; status: number }> {
  return new Promise((resolve, reject) => {
    const child = spawn('python3', ['-m', 'entilabel.cli', ...args], {
      stdio: ['ignore', 'pipe', 'pipe'],
    });
    let stdout = '';
    let stderr = '';
    child.stdout.on('data', (chunk) => (stdout += chunk));
    child.stderr.on('data', (chunk) => (stderr += chunk));
    child.on('error', reject);
    child.on('close', (status) => {
      if (status !== 0) reject(new Error(`cli exited ${status}: ${stderr}`));
      else resolve({ stdout, status: status ?? 0 });
    });
  });
}

export interface RunningServer {
  url: string;
  stop(): void;
}

/** Start `entilabel serve` on an ephemeral port and wait for its banner. */
export function startServer(projectDir: string): Promise<RunningServer> {
  return new Promise((resolve, reject) => {
    const child = spawn(
      'python3',
      ['-m', 'entilabel.cli', 'serve', '--project', projectDir, '--port', '0'],
      { stdio: ['ignore', 'pipe', 'pipe'] },
    );
    let buffer = '';
    const timer = setTimeout(() => {
      child.kill();
      reject(new Error(`server did not start: ${buffer}`));
    }, 15000);
    child.stdout.on('data', (chunk) => {
      buffer += chunk;
      const line = buffer.split('\n').find((l) => l.includes('"serving"'));
      if (line) {
        clearTimeout(timer);
        const url = (JSON.parse(line) as { serving: string }).serving;
        resolve({ url, stop: () => child.kill() });
      }
    });
    child.on('error', (error) => {
      clearTimeout(timer);
      reject(error);
    });
  });
}

export interface FixtureEntity {
  entity_id: string;
  surface: string;
  kind: 'hobby' | 'organization';
  mention_count: number;
}

export function makeProjectDir(name: string, entities: FixtureEntity[]): string {
  const dir = mkdtempSync(join(tmpdir(), `entilabel-${name}-`));
  const lines = entities.map((e) => JSON.stringify(e)).join('\n') + '\n';
  writeFileSync(join(dir, 'entities.jsonl'), lines, 'utf-8');
  return dir;
}
