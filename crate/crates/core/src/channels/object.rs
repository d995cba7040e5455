use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use super::meter::Meter;
use crate::error::{Error, Result};

pub fn bucket_name(worker: u32, n_buckets: u32) -> String {
    format!("bucket-{}", worker % n_buckets)
}

/// `{layer}/{target}/{source}_{target}.dat`, or `.nul` for an empty send.
pub fn object_key(layer: u32, target: u32, source: u32, empty: bool) -> String {
    let ext = if empty { "nul" } else { "dat" };
    format!("{layer}/{target}/{source}_{target}.{ext}")
}

type Bucket = BTreeMap<String, Arc<Vec<u8>>>;

/// Pre-created buckets `bucket-0 .. bucket-{n-1}`. Puts replace whole
/// objects under a write lock, so readers never see partial data.
#[derive(Debug)]
pub struct ObjectStore {
    buckets: HashMap<String, RwLock<Bucket>>,
    meter: Arc<Meter>,
}

impl ObjectStore {
    pub fn new(n_buckets: u32, meter: Arc<Meter>) -> Self {
        let buckets = (0..n_buckets)
            .map(|i| (format!("bucket-{i}"), RwLock::new(Bucket::new())))
            .collect();
        Self { buckets, meter }
    }

    pub fn meter(&self) -> &Arc<Meter> {
        &self.meter
    }

    fn bucket(&self, bucket: &str) -> Result<&RwLock<Bucket>> {
        self.buckets
            .get(bucket)
            .ok_or_else(|| Error::Rejected(format!("no such bucket {bucket}")))
    }

    pub fn put(&self, bucket: &str, key: &str, bytes: Vec<u8>) -> Result<()> {
        let b = self.bucket(bucket)?;
        let len = bytes.len();
        b.write().unwrap().insert(key.to_string(), Arc::new(bytes));
        self.meter.record_put(bucket, key, len);
        Ok(())
    }

    pub fn get(&self, bucket: &str, key: &str) -> Result<Arc<Vec<u8>>> {
        let b = self.bucket(bucket)?;
        self.meter.record_get(bucket, key);
        b.read()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| Error::NotFound {
                bucket: bucket.to_string(),
                key: key.to_string(),
            })
    }

    /// Keys starting with `prefix`, ascending.
    pub fn list(&self, bucket: &str, prefix: &str) -> Result<Vec<String>> {
        let b = self.bucket(bucket)?;
        let keys: Vec<String> = b
            .read()
            .unwrap()
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect();
        self.meter.record_list(bucket, prefix, keys.len());
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ObjectStore {
        ObjectStore::new(10, Arc::new(Meter::new()))
    }

    #[test]
    fn key_scheme() {
        assert_eq!(object_key(3, 12, 5, false), "3/12/5_12.dat");
        assert_eq!(object_key(1, 0, 2, true), "1/0/2_0.nul");
        assert_eq!(bucket_name(12, 10), "bucket-2");
    }

    #[test]
    fn put_get_list() {
        let s = store();
        assert!(s.list("bucket-5", "5/2/").unwrap().is_empty());
        s.put("bucket-2", "5/2/0_2.dat", vec![1, 2, 3]).unwrap();
        s.put("bucket-2", "5/2/1_2.nul", vec![]).unwrap();
        s.put("bucket-2", "5/2/3_2.dat", vec![9]).unwrap();
        s.put("bucket-2", "5/22/0_22.dat", vec![9]).unwrap();
        s.put("bucket-2", "6/2/0_2.dat", vec![9]).unwrap();
        assert_eq!(
            s.list("bucket-2", "5/2/").unwrap(),
            vec!["5/2/0_2.dat", "5/2/1_2.nul", "5/2/3_2.dat"]
        );
        assert_eq!(*s.get("bucket-2", "5/2/0_2.dat").unwrap(), vec![1, 2, 3]);
        assert!(matches!(
            s.get("bucket-2", "nope"),
            Err(Error::NotFound { .. })
        ));
        assert!(s.put("bucket-10", "k", vec![]).is_err());
        let m = s.meter().snapshot();
        assert_eq!((m.v, m.r, m.l_list), (5, 2, 2));
    }

    #[test]
    fn overwrite_is_last_writer_wins() {
        let s = store();
        s.put("bucket-0", "k", vec![1]).unwrap();
        s.put("bucket-0", "k", vec![2, 2]).unwrap();
        assert_eq!(*s.get("bucket-0", "k").unwrap(), vec![2, 2]);
    }

    #[test]
    fn readers_never_see_partial_objects() {
        let s = Arc::new(store());
        let writer = {
            let s = Arc::clone(&s);
            std::thread::spawn(move || {
                for i in 0..200u32 {
                    let len = 1 + (i as usize * 37) % 4000;
                    s.put(
                        "bucket-1",
                        &format!("0/1/{i}_1.dat"),
                        vec![(i % 251) as u8; len],
                    )
                    .unwrap();
                }
            })
        };
        let readers: Vec<_> = (0..3)
            .map(|_| {
                let s = Arc::clone(&s);
                std::thread::spawn(move || {
                    let mut checked = 0;
                    while checked < 200 {
                        for key in s.list("bucket-1", "0/1/").unwrap() {
                            let i: u32 = key[4..key.find('_').unwrap()].parse().unwrap();
                            let data = s.get("bucket-1", &key).unwrap();
                            assert_eq!(data.len(), 1 + (i as usize * 37) % 4000);
                            assert!(data.iter().all(|&b| b == (i % 251) as u8));
                        }
                        checked += 1;
                    }
                })
            })
            .collect();
        writer.join().unwrap();
        readers.into_iter().for_each(|h| h.join().unwrap());
    }
}
