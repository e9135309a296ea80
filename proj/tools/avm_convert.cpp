// Converter stub for recorded parking-garage datasets.
//
// The public release layout is not known here. A converted dataset must end
// up in the directory format read by avm::read_dataset (docs/formats.md):
//   frames.txt       "frame seq t n" then n lines "x y label_id" (vehicle frame, m)
//   wheel.txt        t fl fr rl rr radius track   (wheel rates in rad/s)
//   imu.txt          t yaw_rate ax ay
//   groundtruth.txt  t x y yaw   (optional)
//   landmarks.txt    name x y    (optional)
// Until a real layout is supplied this tool validates its arguments and
// reports that conversion is unavailable.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

int main(int argc, char** argv) {
  CLI::App app{"convert a recorded dataset into the avm_slam directory format"};
  std::string in, out;
  app.add_option("--input", in, "recorded dataset directory")->required();
  app.add_option("--out", out, "output dataset directory")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  nlohmann::ordered_json err{{"level", "error"}, {"command", "convert"}, {"kind", "input"}};
  if (!std::filesystem::is_directory(in)) {
    err["message"] = "input directory does not exist: " + in;
  } else {
    err["message"] = "no converter for this layout; write the files listed in docs/formats.md";
  }
  std::cerr << err.dump() << '\n';
  return 2;
}
