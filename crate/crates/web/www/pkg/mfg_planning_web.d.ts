/* tslint:disable */
/* eslint-disable */

/**
 * Columns packed for JavaScript: `x`, then each value column.
 */
export class Table {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    column(k: number): Float64Array;
    readonly rows: number;
    readonly width: number;
}

/**
 * Columns `x, U (grid), U (characteristics)`.
 */
export function penalizedProfile(g: number, eps: number, t: number, cells: number): Table;

/**
 * Columns `t`, then one position column per start.
 */
export function plannedPaths(g: number, t_min: number, starts: Float64Array, cells: number): Table;

/**
 * Columns `x, U, V`.
 */
export function yosidaProfile(g: number, eps: number, t: number, delta: number, cells: number): Table;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_table_free: (a: number, b: number) => void;
    readonly penalizedProfile: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly plannedPaths: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly table_column: (a: number, b: number) => [number, number];
    readonly table_rows: (a: number) => number;
    readonly table_width: (a: number) => number;
    readonly yosidaProfile: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
