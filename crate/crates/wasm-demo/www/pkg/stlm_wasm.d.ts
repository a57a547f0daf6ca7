/* tslint:disable */
/* eslint-disable */

/**
 * Incremental action parser. Each call returns a JSON array of events.
 */
export class StreamParser {
    free(): void;
    [Symbol.dispose](): void;
    feed(chunk: string): string;
    flush(): string;
    /**
     * True while a tag is open and its payload is being held back.
     */
    isInside(): boolean;
    constructor(cap?: number | null);
}

/**
 * The toy default config as JSON, to prefill the form.
 */
export function defaultConfig(): string;

/**
 * Quantizes one block and returns a JSON [`BlockView`].
 */
export function quantizeBlock(input: string): string;

/**
 * Takes a JSON model config and returns a JSON [`SizeAccount`].
 */
export function sizeReport(config_json: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_streamparser_free: (a: number, b: number) => void;
    readonly defaultConfig: () => [number, number];
    readonly quantizeBlock: (a: number, b: number) => [number, number, number, number];
    readonly sizeReport: (a: number, b: number) => [number, number, number, number];
    readonly streamparser_feed: (a: number, b: number, c: number) => [number, number];
    readonly streamparser_flush: (a: number) => [number, number];
    readonly streamparser_isInside: (a: number) => number;
    readonly streamparser_new: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
