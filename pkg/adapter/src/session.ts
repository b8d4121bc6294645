/**
 * One profiling session per training process.
 *
 * The profiler launches the workload with two environment variables:
 * `JM_MARKER_PIPE` names the marker sink (a named pipe, or a plain file)
 * and `JM_MANIFEST_OUT` names where the model manifest should land.  The
 * session opens the sink, emits a `clock_sync` event first so the profiler
 * can align our monotonic clock with its own, and then stamps run and
 * epoch boundaries as the training loop reports them.
 *
 * Invariants kept here: marker timestamps are strictly increasing, every
 * line is flushed as it is written, the manifest is written at most once
 * per session, and only one session is open in a process at a time.  All
 * emission is meant to happen on the training-loop thread; nothing here is
 * safe to call concurrently.
 */

import * as fs from 'node:fs';
import { INDEXED_KINDS, formatMarkerLine } from './wire.js';
import type { MarkerKind } from './wire.js';
import type { ManifestJson } from './manifest.js';

export const MARKER_PIPE_ENV = 'JM_MARKER_PIPE';
export const MANIFEST_OUT_ENV = 'JM_MANIFEST_OUT';

export interface SessionOptions {
    /** Environment to read sink paths from; defaults to process.env. */
    env?: Record<string, string | undefined>;
    /** Monotonic nanosecond clock; defaults to process.hrtime.bigint. */
    now?: () => bigint;
    /** Warning sink; defaults to console.warn. */
    warn?: (message: string) => void;
    /** Marker destination used when the environment names none, or when
     *  the named sink fails mid-run; defaults to ./markers.jsonl. */
    fallbackPath?: string;
}

let active: ProfileSession | null = null;

/**
 * Open the process's profiling session.
 *
 * Throws if one is already open; close() releases the slot (useful in
 * tests — a real training script opens exactly one).
 */
export function openSession(options: SessionOptions = {}): ProfileSession {
    if (active !== null) {
        throw new Error('a profiling session is already open in this process');
    }
    const session = new ProfileSession(options);
    active = session;
    return session;
}

export class ProfileSession {
    private readonly env: Record<string, string | undefined>;
    private readonly now: () => bigint;
    private readonly warn: (message: string) => void;
    private readonly fallbackPath: string;

    private fd: number;
    private sinkPath: string;
    private degraded = false;
    private lastTNs = -1n;
    private closed = false;
    private manifestWritten = false;
    /** Every line emitted so far, so a failing sink can be replayed into the fallback file. */
    private readonly history: string[] = [];

    constructor(options: SessionOptions = {}) {
        this.env = options.env ?? process.env;
        this.now = options.now ?? (() => process.hrtime.bigint());
        this.warn = options.warn ?? ((message: string) => console.warn(message));
        this.fallbackPath = options.fallbackPath ?? 'markers.jsonl';

        const pipePath = this.env[MARKER_PIPE_ENV];
        if (pipePath) {
            try {
                // Append mode works for both a named pipe (the profiler holds
                // the read end open) and a plain-file sink.
                this.fd = fs.openSync(pipePath, 'a');
                this.sinkPath = pipePath;
            } catch (err) {
                this.warn(
                    `cannot open marker sink ${pipePath} (${(err as Error).message}); ` +
                        `writing markers to ${this.fallbackPath} instead`,
                );
                this.fd = fs.openSync(this.fallbackPath, 'a');
                this.sinkPath = this.fallbackPath;
                this.degraded = true;
            }
        } else {
            this.warn(
                `${MARKER_PIPE_ENV} is not set (not running under the profiler?); ` +
                    `writing markers to ${this.fallbackPath}`,
            );
            this.fd = fs.openSync(this.fallbackPath, 'a');
            this.sinkPath = this.fallbackPath;
            this.degraded = true;
        }

        this.emit('clock_sync');
        this.emit('run_start');
    }

    /** Strictly increasing timestamps even if the clock stalls or repeats. */
    private nextTimestamp(): bigint {
        let t = this.now();
        if (t <= this.lastTNs) {
            t = this.lastTNs + 1n;
        }
        this.lastTNs = t;
        return t;
    }

    private writeLine(line: string): void {
        this.history.push(line);
        try {
            // writeSync is unbuffered: each marker reaches the sink as it
            // happens, so a crashed workload leaves its boundary trail.
            fs.writeSync(this.fd, line + '\n');
        } catch (err) {
            if (this.degraded) {
                throw err; // the plain-file fallback failing too is fatal
            }
            this.degraded = true;
            try {
                fs.closeSync(this.fd);
            } catch {
                // the sink is already gone; nothing to release
            }
            this.warn(
                `marker sink ${this.sinkPath} failed (${(err as Error).message}); ` +
                    `continuing in plain file ${this.fallbackPath}`,
            );
            this.fd = fs.openSync(this.fallbackPath, 'a');
            this.sinkPath = this.fallbackPath;
            // Replay everything so the file carries the same lines the pipe
            // would have.
            fs.writeSync(this.fd, this.history.map((l) => l + '\n').join(''));
        }
    }

    /** Emit one marker. Prefer the named helpers below. */
    emit(kind: MarkerKind, index?: number, phase?: string): void {
        if (this.closed) {
            throw new Error('session is closed');
        }
        if (index === undefined && INDEXED_KINDS.has(kind)) {
            throw new RangeError(`${kind} marker requires an index`);
        }
        this.writeLine(formatMarkerLine(this.nextTimestamp(), kind, index, phase));
    }

    epochStart(index: number): void {
        this.emit('epoch_start', index);
    }

    epochEnd(index: number): void {
        this.emit('epoch_end', index);
    }

    batchDone(index: number): void {
        this.emit('batch_done', index);
    }

    phase(name: string): void {
        this.emit('phase', undefined, name);
    }

    /**
     * Wrap an existing epoch loop: `for (const epoch of session.epochs(n))`
     * emits the start marker before each iteration body and the end marker
     * after it (also on early exit).
     */
    *epochs(count: number, start = 0): Generator<number> {
        for (let index = start; index < start + count; index++) {
            this.epochStart(index);
            try {
                yield index;
            } finally {
                this.epochEnd(index);
            }
        }
    }

    /** Run one epoch body between its boundary markers. */
    async runEpoch<T>(index: number, body: () => T | Promise<T>): Promise<T> {
        this.epochStart(index);
        try {
            return await body();
        } finally {
            this.epochEnd(index);
        }
    }

    /**
     * Write the model manifest where the profiler asked for it.
     *
     * Returns the path written, or null when there is nowhere to write or
     * the manifest has already been written — loops that call this every
     * epoch get a warning, not a rewrite.
     */
    writeManifest(manifest: ManifestJson, outPath?: string): string | null {
        const target = outPath ?? this.env[MANIFEST_OUT_ENV];
        if (!target) {
            this.warn(
                `${MANIFEST_OUT_ENV} is not set and no path was given; manifest not written`,
            );
            return null;
        }
        if (this.manifestWritten) {
            this.warn('manifest already written for this session; ignoring repeat call');
            return null;
        }
        const tmp = `${target}.tmp`;
        fs.writeFileSync(tmp, JSON.stringify(manifest, null, 2) + '\n');
        fs.renameSync(tmp, target);
        this.manifestWritten = true;
        return target;
    }

    /** Emit the run end marker and release the sink and the session slot. */
    close(): void {
        if (this.closed) {
            return;
        }
        this.emit('run_end');
        this.closed = true;
        try {
            fs.closeSync(this.fd);
        } finally {
            if (active === this) {
                active = null;
            }
        }
    }
}
