/* tslint:disable */
/* eslint-disable */

/**
 * A seeded scan instance; timing is left to the caller.
 */
export class ScanBench {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Runs the chunked scan and returns its maximum deviation from the
     * sequential reference.
     */
    chunked(chunk: number): number;
    constructor(len: number, channels: number, state_dim: number, seed: bigint);
    sequential(): void;
}

/**
 * A generated `[3, H, W]` test image.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Downscales by `factor`, upscales back with bicubic interpolation and
     * reports the reconstruction.
     */
    bicubic_round_trip(factor: number): Upscale;
    height(): number;
    /**
     * The scene as RGBA bytes.
     */
    image(): Uint8Array;
    /**
     * `kind` is one of `disc`, `halves` or `waves`; extents must be
     * multiples of 4.
     */
    constructor(kind: string, width: number, height: number);
    /**
     * Scan rank of every pixel as RGBA bytes, dark to bright in visiting
     * order. `mode` is `raster`, `fiedler` or `content_aware`.
     */
    rank_map(mode: string): Uint8Array;
    width(): number;
}

/**
 * Result of [`Scene::bicubic_round_trip`].
 */
export class Upscale {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    high(): Uint8Array;
    low(): Uint8Array;
    low_width(): number;
    psnr_db(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scanbench_free: (a: number, b: number) => void;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly __wbg_upscale_free: (a: number, b: number) => void;
    readonly scanbench_chunked: (a: number, b: number) => [number, number, number];
    readonly scanbench_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly scanbench_sequential: (a: number) => [number, number];
    readonly scene_bicubic_round_trip: (a: number, b: number) => [number, number, number];
    readonly scene_height: (a: number) => number;
    readonly scene_image: (a: number) => [number, number];
    readonly scene_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly scene_rank_map: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_width: (a: number) => number;
    readonly upscale_high: (a: number) => [number, number];
    readonly upscale_low: (a: number) => [number, number];
    readonly upscale_low_width: (a: number) => number;
    readonly upscale_psnr_db: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
