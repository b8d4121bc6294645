export { formatMarkerLine, INDEXED_KINDS } from './wire.js';
export type { MarkerKind } from './wire.js';
export {
    openSession,
    ProfileSession,
    MARKER_PIPE_ENV,
    MANIFEST_OUT_ENV,
} from './session.js';
export type { SessionOptions } from './session.js';
export { extractManifest } from './manifest.js';
export type {
    ExtractOptions,
    LayerSpecJson,
    LayersModelLike,
    LayerLike,
    WeightLike,
    ManifestJson,
} from './manifest.js';
