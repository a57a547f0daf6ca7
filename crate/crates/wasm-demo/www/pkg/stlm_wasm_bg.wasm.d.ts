/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_streamparser_free: (a: number, b: number) => void;
export const defaultConfig: () => [number, number];
export const quantizeBlock: (a: number, b: number) => [number, number, number, number];
export const sizeReport: (a: number, b: number) => [number, number, number, number];
export const streamparser_feed: (a: number, b: number, c: number) => [number, number];
export const streamparser_flush: (a: number) => [number, number];
export const streamparser_isInside: (a: number) => number;
export const streamparser_new: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
