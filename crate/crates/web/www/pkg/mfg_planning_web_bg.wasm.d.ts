/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_table_free: (a: number, b: number) => void;
export const penalizedProfile: (a: number, b: number, c: number, d: number) => [number, number, number];
export const plannedPaths: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const table_column: (a: number, b: number) => [number, number];
export const table_rows: (a: number) => number;
export const table_width: (a: number) => number;
export const yosidaProfile: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
