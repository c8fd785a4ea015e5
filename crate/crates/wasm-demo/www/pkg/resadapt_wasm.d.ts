/* tslint:disable */
/* eslint-disable */

/**
 * A 2D image with row-major `values` (x fastest).
 */
export class Slice {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Second channel (the lesion mask for phantom slices; empty otherwise).
     */
    readonly extra: Float32Array;
    readonly height: number;
    readonly values: Float32Array;
    readonly width: number;
}

/**
 * Central z slice of a scalar-to-degree-`degree` kernel, component `m`
 * (`-degree..=degree`), with seeded random radial weights.
 */
export function kernel_slice(sx: number, sy: number, sz: number, width_mm: number, degree: number, m: number, seed: bigint): Slice;

/**
 * Middle z slice of a random 24 mm phantom rasterized at the spacing.
 */
export function phantom_slice(sx: number, sy: number, sz: number, seed: bigint): Slice;

/**
 * Plan rows as JSON: `[{level, spacing_mm, kernel_width_mm, kernel_extent,
 * pool_width_mm, pool_factors}]`.
 */
export function plan_json(sx: number, sy: number, sz: number, width_mm: number, depth: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_slice_free: (a: number, b: number) => void;
    readonly kernel_slice: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly phantom_slice: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly plan_json: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly slice_extra: (a: number) => [number, number];
    readonly slice_height: (a: number) => number;
    readonly slice_values: (a: number) => [number, number];
    readonly slice_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
