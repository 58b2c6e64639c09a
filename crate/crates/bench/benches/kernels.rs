//! Microbenchmarks for the per-step kernels: the stencil sweep in both loop
//! orders, halo packing, the wire codec, and the cache-model replay. These
//! measure the same code paths the acceptance comparisons time end to end.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rtmlab::halo::wire::{decode_message, encode_message};
use rtmlab::halo::{pack_halo, FaceId, HaloMessage};
use rtmlab::perf::cache::{access_stream, cache_simulate, CacheModel, StreamLayout};
use rtmlab::stencil::apply_stencil;
use rtmlab::{Box3, Extents, Field3, Halo, LoopOrder, Radii, StencilSpec};

fn filled_field(ext: Extents, halo: Halo) -> Field3<f32> {
    let mut field = Field3::zeroed(ext, halo);
    for z in 0..ext.nz as isize {
        for y in 0..ext.ny as isize {
            for x in 0..ext.nx as isize {
                field.set(x, y, z, ((x * 31 + y * 17 + z * 7) % 101) as f32 * 0.01);
            }
        }
    }
    field
}

fn stencil_orders(c: &mut Criterion) {
    let radii = Radii { rx: 4, ry: 4, rz: 2 };
    let spec = StencilSpec::from_radii(radii, 10.0).unwrap();
    let ext = Extents { nx: 48, ny: 32, nz: 24 };
    let halo = Halo { hx: radii.rx, hy: radii.ry, hz: radii.rz };
    let input = filled_field(ext, halo);
    let mut output = Field3::zeroed(ext, halo);
    let tile = Box3 { x0: 0, x1: ext.nx, y0: 0, y1: ext.ny, z0: 0, z1: ext.nz };
    let mut group = c.benchmark_group("stencil");
    for order in [LoopOrder::Yzx, LoopOrder::Zyx] {
        group.bench_function(order.to_string(), |b| {
            b.iter(|| apply_stencil(&input, &mut output, tile, &spec, order).unwrap());
        });
    }
    group.finish();
}

fn halo_pack(c: &mut Criterion) {
    let radii = Radii { rx: 4, ry: 4, rz: 2 };
    let ext = Extents { nx: 64, ny: 64, nz: 32 };
    let halo = Halo { hx: radii.rx, hy: radii.ry, hz: radii.rz };
    let field = filled_field(ext, halo);
    c.bench_function("pack_halo_xlow", |b| {
        b.iter(|| pack_halo(&field, FaceId::XLow, radii.rx, radii.ry).unwrap());
    });
}

fn wire_roundtrip(c: &mut Criterion) {
    let msg = HaloMessage::<f32> {
        source: 0,
        dest: 1,
        step: 42,
        face: FaceId::YHigh,
        payload: (0..2048).map(|i| i as f32 * 0.5).collect(),
    };
    c.bench_function("wire_roundtrip_8k", |b| {
        b.iter(|| {
            let bytes = encode_message(&msg);
            decode_message::<f32>(black_box(&bytes)).unwrap()
        });
    });
}

fn cache_replay(c: &mut Criterion) {
    let radii = Radii { rx: 4, ry: 4, rz: 2 };
    let spec = StencilSpec::from_radii(radii, 1.0).unwrap();
    let (tx, ty, tz) = (32usize, 32, 16);
    let (ax, ay, az) = (tx + 2 * radii.rx, ty + 2 * radii.ry, tz + 2 * radii.rz);
    let layout = StreamLayout {
        ax,
        ay,
        in_base: 0,
        out_base: (ax * ay * az * 4) as u64,
        elem_bytes: 4,
    };
    let tile = Box3 {
        x0: radii.rx,
        x1: radii.rx + tx,
        y0: radii.ry,
        y1: radii.ry + ty,
        z0: radii.rz,
        z1: radii.rz + tz,
    };
    let stream = access_stream(tile, &spec, LoopOrder::Zyx, &layout);
    let model = CacheModel::default();
    c.bench_function("cache_replay_32x32x16", |b| {
        b.iter(|| cache_simulate(black_box(&stream), &model).unwrap());
    });
}

criterion_group!(benches, stencil_orders, halo_pack, wire_roundtrip, cache_replay);
criterion_main!(benches);
