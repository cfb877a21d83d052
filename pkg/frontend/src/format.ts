/** Display helpers: latency badges, hashes, durations. */

/**
 * Badge class for a round-trip latency. Interactive operations should sit
 * under 200 ms; around a second is the full-consensus regime.
 */
export type LatencyBand = 'fast' | 'warn' | 'slow';

export const INTERACTIVE_BOUND_MS = 200;
export const CONSENSUS_BOUND_MS = 1000;

export function latencyBand(ms: number): LatencyBand {
  if (ms < INTERACTIVE_BOUND_MS) return 'fast';
  if (ms < CONSENSUS_BOUND_MS) return 'warn';
  return 'slow';
}

export function formatMs(ms: number): string {
  if (ms < 10) return `${ms.toFixed(1)} ms`;
  if (ms < 10_000) return `${Math.round(ms)} ms`;
  return `${(ms / 1000).toFixed(1)} s`;
}

export function shortHash(hex: string, length = 10): string {
  if (hex.length <= length) return hex;
  return `${hex.slice(0, length)}…`;
}
