// Generate a small planted dataset, audit it, train briefly, evaluate.

#include <iostream>

#include "semcov/semcov.hpp"

using namespace semcov;

int main() {
  auto p = make_preset("tiny", 3);
  const auto ds = generate_synthetic_dataset(p.synth);
  const auto sp = split_dataset(ds, p.ratios, false, 3);

  const auto cov = coverage_table(sp.train, CoverageMode::Soft);
  const auto lt = coverage_report(cov);
  std::cout << "SCGs " << cov.size() << ", coverage min " << io::fmt_fixed(lt.min, 3) << " median "
            << io::fmt_fixed(lt.median, 3) << " max " << io::fmt_fixed(lt.max, 3) << "\n";

  auto res = train(sp.train, sp.val, p.train, [](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << " loss " << io::fmt_fixed(e.total, 4) << " val auroc "
              << io::fmt_fixed(e.val_auroc, 4) << "\n";
  });
  const auto rep = evaluate(res.best, sp.test);
  std::cout << to_json(rep).dump(2) << "\n";
}
