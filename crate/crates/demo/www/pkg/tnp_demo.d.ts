/* tslint:disable */
/* eslint-disable */

export class Predictor {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    static fromBytes(bytes: Uint8Array): Predictor;
    name(): string;
    static newUntrained(variant: string, seed: number): Predictor;
    predict(cx: Float64Array, cy: Float64Array, tx: Float64Array): Float64Array;
}

export function gpSample(kernel: string, lengthscale: number, n: number, seed: number): Float64Array;

export function inputGrid(n: number): Float64Array;

export function maskGrid(variant: string, m: number, nt: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_predictor_free: (a: number, b: number) => void;
    readonly gpSample: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly inputGrid: (a: number) => [number, number];
    readonly maskGrid: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly predictor_fromBytes: (a: number, b: number) => [number, number, number];
    readonly predictor_name: (a: number) => [number, number];
    readonly predictor_newUntrained: (a: number, b: number, c: number) => [number, number, number];
    readonly predictor_predict: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
