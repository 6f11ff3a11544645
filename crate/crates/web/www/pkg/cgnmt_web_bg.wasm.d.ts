/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_playground_free: (a: number, b: number) => void;
export const playground_epoch: (a: number) => number;
export const playground_new: (a: bigint) => [number, number, number];
export const playground_sample_source: (a: number) => [number, number];
export const playground_scale_sweep: (a: number, b: number, c: number) => [number, number, number, number];
export const playground_train_epoch: (a: number) => [number, number, number, number];
export const playground_translate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
