/**
 * Model accounting: walk a built layers model and produce the manifest
 * JSON the profiler stores alongside a run.
 *
 * Counting conventions match the profiler's model registry exactly so the
 * two sides can cross-check each other:
 *
 *  - one fused multiply-add is one MAC; bias additions, pooling,
 *    activations and normalisation cost zero MACs;
 *  - dense and conv kernels (plus bias vectors) are parameters;
 *  - normalisation scale/offset weights are *not* counted as parameters,
 *    and the running statistics count as buffer bytes instead;
 *  - everything is accounted at float32 width (4 bytes per value).
 *
 * Layers the registry schema cannot express still have their weights
 * counted into the parameter totals (the framework knows their shapes),
 * but their arithmetic is unknown: such layers are reported through the
 * warning callback and left out of the `layers` array, so the profiler's
 * recomputation from `layers` may legitimately disagree with the declared
 * totals.  Declared values win on that side; the disagreement is logged.
 */

/** The subset of a tf.js LayerVariable this module reads. */
export interface WeightLike {
    name: string;
    shape: ReadonlyArray<number | null>;
    trainable: boolean;
}

/** The subset of a tf.js Layer this module reads. */
export interface LayerLike {
    name: string;
    trainable: boolean;
    weights: WeightLike[];
    outputShape: Array<number | null> | Array<Array<number | null>>;
    getClassName(): string;
    getConfig(): Record<string, unknown>;
}

/** The subset of a tf.js LayersModel this module reads. */
export interface LayersModelLike {
    name: string;
    layers: LayerLike[];
}

/** One entry of the manifest's `layers` array (the registry's layer schema). */
export interface LayerSpecJson {
    kind: 'dense' | 'conv2d' | 'pool' | 'activation' | 'norm';
    in_features?: number;
    out_features?: number;
    kernel_h?: number;
    kernel_w?: number;
    in_channels?: number;
    out_channels?: number;
    out_h?: number;
    out_w?: number;
    bias?: boolean;
    frozen?: boolean;
    shape?: number[];
}

/** Manifest JSON as the profiler's schema (version 1) expects it. */
export interface ManifestJson {
    schema_version: 1;
    name: string;
    variant?: string;
    model_size_bytes: number;
    total_params: number;
    trainable_params: number;
    buffer_bytes: number;
    macs_per_sample?: number;
    source: 'adapter';
    layers?: LayerSpecJson[];
}

export interface ExtractOptions {
    /** Manifest name; defaults to the model's own (often auto-generated) name. */
    name?: string;
    variant?: string;
    /** Warning sink (defaults to console.warn). */
    warn?: (message: string) => void;
}

const BYTES_PER_PARAM = 4;

const POOL_CLASSES = new Set([
    'MaxPooling1D',
    'MaxPooling2D',
    'MaxPooling3D',
    'AveragePooling1D',
    'AveragePooling2D',
    'AveragePooling3D',
    'GlobalMaxPooling1D',
    'GlobalMaxPooling2D',
    'GlobalAveragePooling1D',
    'GlobalAveragePooling2D',
]);

const NORM_CLASSES = new Set(['BatchNormalization', 'LayerNormalization']);

// Shape plumbing and element-wise layers: no weights worth counting and
// zero MACs under the fused multiply-add convention.
const ZERO_COST_CLASSES = new Set([
    'Activation',
    'ReLU',
    'LeakyReLU',
    'ELU',
    'Softmax',
    'Dropout',
    'SpatialDropout1D',
    'GaussianNoise',
    'GaussianDropout',
    'AlphaDropout',
    'Flatten',
    'Reshape',
    'Permute',
    'RepeatVector',
    'Masking',
    'ZeroPadding2D',
    'Cropping2D',
    'UpSampling2D',
    'Add',
    'Average',
    'Concatenate',
    'Maximum',
    'Minimum',
    'Multiply',
    'Subtract',
]);

// Normalisation running statistics as tf.js names them; these exist to
// carry state, not to learn, so they are buffers rather than parameters.
const MOVING_STAT = /moving_(mean|variance)$/;

function weightSize(weight: WeightLike): number {
    let size = 1;
    for (const dim of weight.shape) {
        if (dim === null || !Number.isInteger(dim) || dim <= 0) {
            throw new Error(
                `weight ${weight.name} has unresolved shape ${JSON.stringify(weight.shape)}`,
            );
        }
        size *= dim;
    }
    return size;
}

function findKernel(layer: LayerLike): WeightLike {
    const kernel = layer.weights.find((w) => /\/kernel$/.test(w.name)) ?? layer.weights[0];
    if (kernel === undefined) {
        throw new Error(`layer ${layer.name} has no kernel weight; is the model built?`);
    }
    return kernel;
}

/** Output shape without the batch dimension, for the descriptive `shape` field. */
function outShape(layer: LayerLike): number[] {
    let shape = layer.outputShape;
    if (Array.isArray(shape[0])) {
        throw new Error(`layer ${layer.name} has multiple outputs; cannot extract a manifest`);
    }
    shape = shape as Array<number | null>;
    return shape.slice(1).filter((d): d is number => typeof d === 'number');
}

/**
 * Extract a manifest from a built layers model.
 *
 * The model must know its shapes (give the first layer an `inputShape`, or
 * call `model.build()` first).  When no layer at all is of a kind the
 * registry schema knows, the manifest degrades to parameter counts taken
 * straight from the framework's weight accounting, with MACs and the
 * layers array omitted.
 */
export function extractManifest(
    model: LayersModelLike,
    options: ExtractOptions = {},
): ManifestJson {
    const warn = options.warn ?? ((message: string) => console.warn(message));

    const layers: LayerSpecJson[] = [];
    const unknownLayers: string[] = [];
    let totalParams = 0;
    let trainableParams = 0;
    let bufferBytes = 0;
    let macs = 0;
    let sawLayer = false;
    let recognisedAny = false;

    for (const layer of model.layers) {
        const cls = layer.getClassName();
        if (cls === 'InputLayer') {
            continue;
        }
        sawLayer = true;

        if (cls === 'Dense') {
            recognisedAny = true;
            const kernel = findKernel(layer);
            const [inFeatures, outFeatures] = kernel.shape as number[];
            const bias = layer.getConfig().useBias !== false;
            const frozen = !layer.trainable;
            const params = inFeatures * outFeatures + (bias ? outFeatures : 0);
            totalParams += params;
            trainableParams += frozen ? 0 : params;
            macs += inFeatures * outFeatures;
            const spec: LayerSpecJson = {
                kind: 'dense',
                in_features: inFeatures,
                out_features: outFeatures,
                bias,
            };
            if (frozen) {
                spec.frozen = true;
            }
            layers.push(spec);
        } else if (cls === 'Conv2D') {
            recognisedAny = true;
            const kernel = findKernel(layer);
            const [kernelH, kernelW, inChannels, outChannels] = kernel.shape as number[];
            const bias = layer.getConfig().useBias !== false;
            const frozen = !layer.trainable;
            const channelsFirst = layer.getConfig().dataFormat === 'channelsFirst';
            const out = outShape(layer); // [h, w, c] or [c, h, w]
            const outH = channelsFirst ? out[1] : out[0];
            const outW = channelsFirst ? out[2] : out[1];
            if (!Number.isInteger(outH) || !Number.isInteger(outW)) {
                throw new Error(
                    `layer ${layer.name}: output shape unresolved; build the model first`,
                );
            }
            const params = kernelH * kernelW * inChannels * outChannels + (bias ? outChannels : 0);
            totalParams += params;
            trainableParams += frozen ? 0 : params;
            macs += kernelH * kernelW * inChannels * outChannels * outH * outW;
            const spec: LayerSpecJson = {
                kind: 'conv2d',
                kernel_h: kernelH,
                kernel_w: kernelW,
                in_channels: inChannels,
                out_channels: outChannels,
                out_h: outH,
                out_w: outW,
                bias,
            };
            if (frozen) {
                spec.frozen = true;
            }
            layers.push(spec);
        } else if (NORM_CLASSES.has(cls)) {
            recognisedAny = true;
            // Scale/offset weights are deliberately not parameters under the
            // shared counting convention; only the running stats persist as
            // buffer bytes.
            for (const weight of layer.weights) {
                if (MOVING_STAT.test(weight.name)) {
                    bufferBytes += BYTES_PER_PARAM * weightSize(weight);
                }
            }
            layers.push({ kind: 'norm', shape: outShape(layer) });
        } else if (POOL_CLASSES.has(cls)) {
            recognisedAny = true;
            layers.push({ kind: 'pool', shape: outShape(layer) });
        } else if (ZERO_COST_CLASSES.has(cls)) {
            recognisedAny = true;
            layers.push({ kind: 'activation', shape: outShape(layer) });
        } else {
            // Exotic layer: its weights are still parameters, its work is
            // not expressible in the schema.
            for (const weight of layer.weights) {
                const size = weightSize(weight);
                totalParams += size;
                trainableParams += weight.trainable ? size : 0;
            }
            unknownLayers.push(`${layer.name} (${cls})`);
        }
    }

    if (unknownLayers.length > 0 && recognisedAny) {
        warn(
            `MACs unknown for ${unknownLayers.length} layer(s): ${unknownLayers.join(', ')}; ` +
                'their parameters are counted but their work is not',
        );
    }

    const countsOnly = sawLayer && !recognisedAny;
    if (countsOnly) {
        warn(
            `model ${options.name ?? model.name}: no layer of a known kind ` +
                `(${unknownLayers.join(', ')}); manifest carries parameter counts only`,
        );
    }

    const includeMacs = !countsOnly;
    return {
        schema_version: 1,
        name: options.name ?? model.name,
        ...(options.variant !== undefined ? { variant: options.variant } : {}),
        model_size_bytes: BYTES_PER_PARAM * totalParams + bufferBytes,
        total_params: totalParams,
        trainable_params: trainableParams,
        buffer_bytes: bufferBytes,
        ...(includeMacs ? { macs_per_sample: macs } : {}),
        source: 'adapter',
        ...(includeMacs && layers.length > 0 ? { layers } : {}),
    };
}
