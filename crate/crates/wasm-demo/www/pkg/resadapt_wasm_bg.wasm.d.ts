/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_slice_free: (a: number, b: number) => void;
export const kernel_slice: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
export const phantom_slice: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const plan_json: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const slice_extra: (a: number) => [number, number];
export const slice_height: (a: number) => number;
export const slice_values: (a: number) => [number, number];
export const slice_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
