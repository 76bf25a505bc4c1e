/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scanbench_free: (a: number, b: number) => void;
export const __wbg_scene_free: (a: number, b: number) => void;
export const __wbg_upscale_free: (a: number, b: number) => void;
export const scanbench_chunked: (a: number, b: number) => [number, number, number];
export const scanbench_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const scanbench_sequential: (a: number) => [number, number];
export const scene_bicubic_round_trip: (a: number, b: number) => [number, number, number];
export const scene_height: (a: number) => number;
export const scene_image: (a: number) => [number, number];
export const scene_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const scene_rank_map: (a: number, b: number, c: number) => [number, number, number, number];
export const scene_width: (a: number) => number;
export const upscale_high: (a: number) => [number, number];
export const upscale_low: (a: number) => [number, number];
export const upscale_low_width: (a: number) => number;
export const upscale_psnr_db: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
