/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_predictor_free: (a: number, b: number) => void;
export const gpSample: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const inputGrid: (a: number) => [number, number];
export const maskGrid: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const predictor_fromBytes: (a: number, b: number) => [number, number, number];
export const predictor_name: (a: number) => [number, number];
export const predictor_newUntrained: (a: number, b: number, c: number) => [number, number, number];
export const predictor_predict: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
