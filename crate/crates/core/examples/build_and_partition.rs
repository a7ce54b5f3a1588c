//! Builds the two model families, lists their transfer partitions and
//! round-trips a checkpoint.

use reuselab::netlab::{
    build_model, load_checkpoint, partition_of, save_checkpoint, snapshot_weights, ArchSpec, Capacity, Family, InputShape, SnapshotTag,
};

fn main() -> reuselab::Result<()> {
    let dir = tempfile::tempdir().map_err(reuselab::Error::io("tempdir"))?;
    for family in [Family::MiniCnn, Family::MiniVit] {
        let spec = ArchSpec::new(family, Capacity::Tiny, InputShape::new(32, 32, 3), 10, 0);
        let net = build_model(&spec)?;
        println!("{}: {} parameters, depth {}", net.arch_id(), net.parameter_count(), net.depth());
        for g in &partition_of(&net)?.groups {
            println!("  {:<12} tap {:<20} modules {:?}", g.group_id, g.tap_id.as_deref().unwrap_or("-"), g.module_ids);
        }
        let snap = snapshot_weights(&net, SnapshotTag::Initial);
        let path = save_checkpoint(&snap, dir.path(), family.as_str())?;
        let back = load_checkpoint(&path)?;
        println!("  checkpoint {} round trip identical: {}", path.display(), back.same_values(&snap));
    }
    Ok(())
}
