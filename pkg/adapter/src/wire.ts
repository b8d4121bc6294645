/**
 * Newline-delimited JSON marker lines shared with the profiler.
 *
 * One event per line: `{"t_ns":<int>,"kind":"epoch_start","index":<int>}`.
 * This is a byte-level contract — field names, field order and the kind
 * vocabulary must not drift, and `t_ns` is integer nanoseconds from a
 * monotonic clock, never the wall clock.  The profiler aligns our clock
 * with its own through the `clock_sync` event a session emits first.
 */

export type MarkerKind =
    | 'run_start'
    | 'run_end'
    | 'epoch_start'
    | 'epoch_end'
    | 'batch_done'
    | 'phase'
    | 'clock_sync';

/** Kinds that must carry an integer index. */
export const INDEXED_KINDS: ReadonlySet<MarkerKind> = new Set<MarkerKind>([
    'epoch_start',
    'epoch_end',
    'batch_done',
]);

/**
 * Render one marker line, without the trailing newline.
 *
 * Timestamps are bigint because monotonic nanoseconds overflow the safe
 * integer range; the digits go into the line directly so nothing is
 * rounded on the way out.
 */
export function formatMarkerLine(
    tNs: bigint,
    kind: MarkerKind,
    index?: number,
    phase?: string,
): string {
    if (tNs < 0n) {
        throw new RangeError(`marker timestamp must be >= 0, got ${tNs}`);
    }
    if (index === undefined && INDEXED_KINDS.has(kind)) {
        throw new RangeError(`${kind} marker requires an index`);
    }
    if (index !== undefined && (!Number.isInteger(index) || index < 0)) {
        throw new RangeError(`marker index must be a non-negative integer, got ${index}`);
    }
    let line = `{"t_ns":${tNs},"kind":"${kind}"`;
    if (index !== undefined) {
        line += `,"index":${index}`;
    }
    if (phase !== undefined) {
        line += `,"phase":${JSON.stringify(phase)}`;
    }
    return line + '}';
}
